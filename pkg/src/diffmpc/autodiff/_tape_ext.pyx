# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tape storage and reverse sweep (see ``_tape_py`` for the fallback)."""
from cpython.array cimport array, clone
from cpython.mem cimport PyMem_Realloc, PyMem_Free

cdef array _DOUBLE_TEMPLATE = array("d", [])
cdef array _BYTE_TEMPLATE = array("b", [])


cdef class TapeBuffer:
    cdef Py_ssize_t n, cap
    cdef signed char* _kind
    cdef double* _value
    cdef Py_ssize_t* _p0
    cdef Py_ssize_t* _p1
    cdef double* _d0
    cdef double* _d1

    def __cinit__(self):
        self.n = 0
        self.cap = 0
        self._grow(1024)

    def __dealloc__(self):
        PyMem_Free(self._kind)
        PyMem_Free(self._value)
        PyMem_Free(self._p0)
        PyMem_Free(self._p1)
        PyMem_Free(self._d0)
        PyMem_Free(self._d1)

    cdef int _grow(self, Py_ssize_t cap) except -1:
        cdef void* tmp
        tmp = PyMem_Realloc(self._kind, cap * sizeof(signed char))
        if tmp == NULL:
            raise MemoryError()
        self._kind = <signed char*>tmp
        tmp = PyMem_Realloc(self._value, cap * sizeof(double))
        if tmp == NULL:
            raise MemoryError()
        self._value = <double*>tmp
        tmp = PyMem_Realloc(self._p0, cap * sizeof(Py_ssize_t))
        if tmp == NULL:
            raise MemoryError()
        self._p0 = <Py_ssize_t*>tmp
        tmp = PyMem_Realloc(self._p1, cap * sizeof(Py_ssize_t))
        if tmp == NULL:
            raise MemoryError()
        self._p1 = <Py_ssize_t*>tmp
        tmp = PyMem_Realloc(self._d0, cap * sizeof(double))
        if tmp == NULL:
            raise MemoryError()
        self._d0 = <double*>tmp
        tmp = PyMem_Realloc(self._d1, cap * sizeof(double))
        if tmp == NULL:
            raise MemoryError()
        self._d1 = <double*>tmp
        self.cap = cap
        return 0

    def __len__(self):
        return self.n

    cpdef Py_ssize_t push(self, signed char kind, double value,
                          Py_ssize_t p0, double d0,
                          Py_ssize_t p1, double d1) except -2:
        cdef Py_ssize_t i = self.n
        if p0 >= i or p1 >= i:
            raise IndexError("parent index must precede the new node")
        if i == self.cap:
            self._grow(2 * self.cap)
        self._kind[i] = kind
        self._value[i] = value
        self._p0[i] = p0
        self._d0[i] = d0
        self._p1[i] = p1
        self._d1[i] = d1
        self.n = i + 1
        return i

    def clear(self):
        self.n = 0

    def node(self, Py_ssize_t i):
        """(kind, value, (p0, p1), (d0, d1)) of node ``i``."""
        if not 0 <= i < self.n:
            raise IndexError(i)
        return (self._kind[i], self._value[i],
                (self._p0[i], self._p1[i]), (self._d0[i], self._d1[i]))

    @property
    def kind(self):
        cdef array out = clone(_BYTE_TEMPLATE, self.n, zero=False)
        cdef Py_ssize_t i
        for i in range(self.n):
            out.data.as_schars[i] = self._kind[i]
        return out

    @property
    def value(self):
        cdef array out = clone(_DOUBLE_TEMPLATE, self.n, zero=False)
        cdef Py_ssize_t i
        for i in range(self.n):
            out.data.as_doubles[i] = self._value[i]
        return out

    def reverse(self, Py_ssize_t seed):
        if not 0 <= seed < self.n:
            raise IndexError(f"seed {seed} not on tape of {self.n} nodes")
        cdef array out = clone(_DOUBLE_TEMPLATE, self.n, zero=True)
        cdef double* adj = out.data.as_doubles
        cdef Py_ssize_t i, j
        cdef double a
        adj[seed] = 1.0
        for i in range(seed, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            j = self._p0[i]
            if j >= 0:
                adj[j] += a * self._d0[i]
                j = self._p1[i]
                if j >= 0:
                    adj[j] += a * self._d1[i]
        return out
