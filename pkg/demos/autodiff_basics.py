"""A tour of the tensor engine: build a graph, differentiate it, check it.

Run from the repository root after `pip install -e .`:

    python3 demos/autodiff_basics.py
"""

import numpy as np

from cadet import tensor as T
from cadet.gradcheck import gradcheck
from cadet.tensor import Tensor


def main():
    rng = np.random.default_rng(7)

    print("== forward and backward on a small expression ==")
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    y = T.relu(x @ w)
    loss = (y ** 2.0).mean()
    loss.backward()
    print(f"loss               {loss.data.item():.6f}")
    print(f"x.grad shape       {x.grad.shape}")
    print(f"w.grad[:, 0]       {np.array2string(w.grad[:, 0], precision=4)}")

    print()
    print("== the same gradient, two ways ==")
    # central differences probe the function the graph actually computes;
    # agreement to ~1e-9 at f64 is the expected noise floor away from
    # the relu kink
    err = gradcheck(lambda a, b: (T.relu(a @ b) ** 2.0).mean(), [x, w])
    print(f"max relative error analytic vs numeric: {err:.2e}")

    print()
    print("== broadcasting tracks shape, the backward un-broadcasts ==")
    row = Tensor(rng.standard_normal((1, 4)), requires_grad=True)
    out = ((x + row) * 2.0).sum()
    out.backward()
    print(f"row grad (summed over the broadcast axis): {np.array2string(row.grad, precision=3)}")
    print(f"every entry is 2 * 3 rows = 6:             {np.allclose(row.grad, 6.0)}")

    print()
    print("== gradients stop where you tell them to ==")
    a = Tensor(np.array([1.5]), requires_grad=True)
    frozen = a.detach()
    out = (a * frozen).sum()   # d/da of a * const(a) = const(a)
    out.backward()
    print(f"d(a * a.detach())/da = {a.grad[0]} (the detached copy stays data)")

    print()
    print("== trilinear sampling is differentiable in the points too ==")
    volume = Tensor(rng.standard_normal((2, 4, 4, 3)), requires_grad=True)
    points = Tensor(np.array([[0.5, 1.25, 2.75], [1.0, 2.0, 0.5]]),
                    requires_grad=True)
    sampled = T.trilinear_sample(volume, points)
    sampled.sum().backward()
    print(f"sampled shape {sampled.shape}, point grads:\n"
          f"{np.array2string(points.grad, precision=4)}")


if __name__ == "__main__":
    main()
