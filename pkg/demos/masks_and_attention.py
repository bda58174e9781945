"""How direction and distance shape attention before any training.

With identical content logits everywhere, whatever structure shows up in the
weights comes from the masks alone.
"""
import numpy as np

from dsan import tensor as T
from dsan.masks import combine, mask_set

np.set_printoptions(precision=3, suppress=True, linewidth=120)
n = 6
real = np.ones(n, dtype=bool)

for alpha in (0.0, 1.5):
    masks = mask_set(n, alpha)
    for direction in ("forward", "backward"):
        offset = combine(masks, direction, real)
        weights = T.softmax_rows(np.zeros((n, n)) + offset).data
        print(f"alpha={alpha}  {direction}: row i = how word i spreads its attention")
        print(weights, "\n")

# padding: two extra columns change nothing for the real rows
padded = np.r_[real, False, False]
w_pad = T.softmax_rows(np.zeros((n + 2, n + 2)) + combine(mask_set(n + 2, 1.5), "forward", padded)).data
w_ref = T.softmax_rows(np.zeros((n, n)) + combine(mask_set(n, 1.5), "forward", real)).data
print("padded rows/columns leave real weights bit-identical:", np.array_equal(w_pad[:n, :n], w_ref))
