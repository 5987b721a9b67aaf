"""Pure-Python tape storage and reverse sweep.

Mirror of ``_tape_ext.pyx``; selected at import when the compiled
extension is unavailable or ``DIFFMPC_PURE_PYTHON=1`` is set.
"""
from array import array


class TapeBuffer:
    """Append-only node store: every node has at most two parents."""

    __slots__ = ("kind", "value", "p0", "p1", "d0", "d1")

    def __init__(self):
        self.kind = array("b")
        self.value = array("d")
        self.p0 = []
        self.p1 = []
        self.d0 = []
        self.d1 = []

    def __len__(self):
        return len(self.value)

    def push(self, kind, value, p0, d0, p1, d1):
        n = len(self.value)
        if p0 >= n or p1 >= n:
            raise IndexError("parent index must precede the new node")
        self.kind.append(kind)
        self.value.append(value)
        self.p0.append(p0)
        self.d0.append(d0)
        self.p1.append(p1)
        self.d1.append(d1)
        return n

    def clear(self):
        self.__init__()

    def node(self, i):
        """(kind, value, (p0, p1), (d0, d1)) of node ``i``."""
        return (self.kind[i], self.value[i],
                (self.p0[i], self.p1[i]), (self.d0[i], self.d1[i]))

    def reverse(self, seed):
        n = len(self.value)
        if not 0 <= seed < n:
            raise IndexError(f"seed {seed} not on tape of {n} nodes")
        adj = [0.0] * n
        adj[seed] = 1.0
        p0, p1, d0, d1 = self.p0, self.p1, self.d0, self.d1
        for i in range(seed, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            j = p0[i]
            if j >= 0:
                adj[j] += a * d0[i]
                j = p1[i]
                if j >= 0:
                    adj[j] += a * d1[i]
        return array("d", adj)
