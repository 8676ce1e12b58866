"""Pure-Python BPE merge kernel.

Mirrors ``_bpe_cy.MergeTable`` exactly; used when the compiled extension
is unavailable or ``RECAM_PURE_PYTHON`` is set.
"""


class MergeTable:
    """Ranked merge rules over integer symbol ids.

    ``left[r], right[r] -> merged[r]`` is the merge of rank ``r``; lower
    ranks are applied first. A repeated pair keeps its first (lowest) rank.
    """

    backend = "python"

    def __init__(self, left, right, merged):
        if not (len(left) == len(right) == len(merged)):
            raise ValueError("left, right and merged must have equal length")
        table = {}
        for rank, (a, b, m) in enumerate(zip(left, right, merged)):
            table.setdefault((int(a), int(b)), (rank, int(m)))
        self._table = table

    def __len__(self):
        return len(self._table)

    def apply(self, symbols):
        word = list(symbols)
        table = self._table
        while len(word) > 1:
            best = None
            best_rank = None
            for i in range(len(word) - 1):
                hit = table.get((word[i], word[i + 1]))
                if hit is not None and (best_rank is None or hit[0] < best_rank):
                    best_rank = hit[0]
                    best = (word[i], word[i + 1], hit[1])
            if best is None:
                break
            a, b, m = best
            out = []
            i = 0
            n = len(word)
            while i < n:
                if i < n - 1 and word[i] == a and word[i + 1] == b:
                    out.append(m)
                    i += 2
                else:
                    out.append(word[i])
                    i += 1
            word = out
        return word

    def apply_many(self, words):
        return [self.apply(w) for w in words]
