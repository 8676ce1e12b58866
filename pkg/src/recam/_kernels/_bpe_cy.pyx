# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled BPE merge kernel (see ``_bpe_py`` for the reference semantics)."""

from libc.stdint cimport uint32_t, uint64_t
from libcpp.pair cimport pair
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector
from cython.operator cimport dereference as deref


cdef inline uint64_t _key(int a, int b) noexcept nogil:
    return (<uint64_t><uint32_t>a << 32) | <uint64_t><uint32_t>b


cdef class MergeTable:
    cdef unordered_map[uint64_t, pair[int, int]] _table

    backend = "cython"

    def __init__(self, left, right, merged):
        if not (len(left) == len(right) == len(merged)):
            raise ValueError("left, right and merged must have equal length")
        cdef int rank = 0
        cdef uint64_t k
        for a, b, m in zip(left, right, merged):
            if a < 0 or b < 0 or m < 0:
                raise ValueError("symbol ids must be non-negative")
            k = _key(a, b)
            if self._table.count(k) == 0:
                self._table[k] = pair[int, int](rank, <int>m)
            rank += 1

    def __len__(self):
        return self._table.size()

    cdef vector[int] _merge(self, vector[int] word) noexcept nogil:
        cdef vector[int] out
        cdef size_t i, n
        cdef int best_rank, a = 0, b = 0, m = 0
        cdef unordered_map[uint64_t, pair[int, int]].iterator it
        cdef unordered_map[uint64_t, pair[int, int]].iterator end = self._table.end()
        while word.size() > 1:
            n = word.size()
            best_rank = -1
            for i in range(n - 1):
                it = self._table.find(_key(word[i], word[i + 1]))
                if it != end and (best_rank < 0 or deref(it).second.first < best_rank):
                    best_rank = deref(it).second.first
                    a = word[i]
                    b = word[i + 1]
                    m = deref(it).second.second
            if best_rank < 0:
                break
            out.clear()
            i = 0
            while i < n:
                if i < n - 1 and word[i] == a and word[i + 1] == b:
                    out.push_back(m)
                    i += 2
                else:
                    out.push_back(word[i])
                    i += 1
            word.swap(out)
        return word

    def apply(self, symbols):
        cdef vector[int] word = symbols
        return self._merge(word)

    def apply_many(self, words):
        return [self._merge(<vector[int]>w) for w in words]

