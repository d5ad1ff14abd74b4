"""Dense numerical primitives shared by every trainable model.

Everything is float64 numpy at desk scale. Models register their weights in
a ParamStore, which pairs each parameter array with a same-shaped gradient
buffer and iterates in insertion order, so SGD sweeps and finite-difference
checks are reproducible run to run. There is no autodiff tape: every model
implements its own backward pass and proves it against check_gradient.
"""

import numpy as np

NORM_EPS = 1e-12


def make_rng(seed):
    """Seeded PCG64 generator.

    PCG64 is the single PRNG used throughout; numpy guarantees the same
    seed yields the same draw sequence on every supported platform, which
    is what makes initializations and shuffles bit-reproducible.
    """
    return np.random.default_rng(int(seed))


def init_uniform(rng, shape, scale=0.08):
    """Weight initialization, uniform on [-scale, scale]."""
    return rng.uniform(-scale, scale, size=shape)


def require_finite(name, arr):
    """Raise if `arr` contains NaN or Inf, naming the first offending index."""
    arr = np.asarray(arr, dtype=np.float64)
    finite = np.isfinite(arr)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise ValueError(f"{name} has a non-finite entry at flat index {bad}")
    return arr


def sigmoid(x):
    """Numerically stable logistic function, branching on sign."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y):
    """Derivative of sigmoid expressed in its output y = sigmoid(x)."""
    return y * (1.0 - y)


def tanh_grad(y):
    """Derivative of tanh expressed in its output y = tanh(x)."""
    return 1.0 - y * y


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    """Subgradient of ReLU in its input; 0 at the kink."""
    return (np.asarray(x) > 0).astype(np.float64)


def stable_softmax(logits):
    """Softmax with max-subtraction so huge logits cannot overflow.

    Rejects non-finite input (naming the offending index), preserves the
    argmax, and returns a vector that sums to 1.
    """
    z = require_finite("softmax logits", logits)
    if z.size == 0:
        raise ValueError("softmax logits must be non-empty")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def unit_normalize(v):
    """Scale v to unit L2 norm. Rejects vectors with norm below 1e-12."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot normalize an empty vector")
    n = np.linalg.norm(v)
    if n < NORM_EPS:
        raise ValueError(f"cannot normalize vector with norm {n:.3e} < {NORM_EPS:.0e}")
    return v / n


class ParamStore:
    """Named parameters, each paired with a gradient buffer of equal shape.

    Iteration order is insertion order and therefore stable across runs for
    the same construction sequence. Arrays returned by add() alias the
    stored ones, so models can keep attribute references while training
    code walks the store generically.
    """

    def __init__(self):
        self._params = {}
        self._grads = {}

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.ascontiguousarray(array, dtype=np.float64)
        self._params[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def names(self):
        return list(self._params)

    def get(self, name):
        return self._params[name]

    def grad(self, name):
        return self._grads[name]

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for g in self._grads.values():
            g[...] = 0.0

    def sgd_step(self, lr):
        for name, p in self._params.items():
            p -= lr * self._grads[name]

    def n_entries(self):
        return sum(p.size for p in self._params.values())

    def clone_grads(self):
        return {name: g.copy() for name, g in self._grads.items()}

    def check_shapes(self):
        for name, p in self._params.items():
            if self._grads[name].shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name!r}")


def check_gradient(loss_fn, store, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `loss_fn(store)` must return a scalar loss and, as a side effect, leave
    the analytic gradients in the store's gradient buffers (the store is
    zeroed here before the analytic call). The numeric side perturbs each
    parameter entry by +/-eps in place and uses only the returned loss, so
    whatever loss_fn does to the gradient buffers afterwards is ignored.

    The error for one entry is |a - n| / max(|a|, |n|, 1e-8); the return
    value is the max over all entries of all parameters. A loss_fn that
    returns a non-finite value aborts with the name of the parameter being
    perturbed at the time.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    store.zero_grads()
    base = float(loss_fn(store))
    if not np.isfinite(base):
        raise ValueError("loss_fn returned a non-finite value at the unperturbed point")
    analytic = store.clone_grads()

    worst = 0.0
    for name, p in store.items():
        flat = p.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = float(loss_fn(store))
            flat[j] = orig - eps
            down = float(loss_fn(store))
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError(f"loss_fn returned a non-finite value while perturbing {name!r}")
            numeric = (up - down) / (2.0 * eps)
            a = aflat[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
