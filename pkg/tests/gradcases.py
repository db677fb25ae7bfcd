"""Random gradient-check cases for every differentiable op and both losses.

Each case builds float64 inputs, a scalar-valued function of Tensors, and
is checked against central finite differences on the forward pass alone.
"""
import numpy as np

from bdistill import tensor as T
from bdistill.losses import hard_loss, soft_loss
from bdistill.tensor import Tensor

from oracles import assert_grad_close, central_differences


def _weighted(out, weights):
    # contract with a fixed random tensor so the root is scalar and every
    # output element influences it differently
    return T.sum(T.mul(out, Tensor(weights)))


def _case(name, make_inputs, fn):
    return name, make_inputs, fn


def _shape(rng, lo=1, hi=4, ndim=2):
    return tuple(int(x) for x in rng.integers(lo, hi + 1, size=ndim))


def build_cases():
    cases = []

    def unary(name, op, positive=False, ndim=2):
        def make(rng):
            shape = _shape(rng, ndim=ndim)
            x = rng.uniform(0.5, 2.0, shape) if positive else rng.standard_normal(shape)
            return [x], {"w": rng.standard_normal(shape)}
        return _case(name, make, lambda xs, aux: _weighted(op(xs[0]), aux["w"]))

    def binary(name, op):
        def make(rng):
            shape = _shape(rng, ndim=3)
            other = list(shape)
            other[int(rng.integers(0, 3))] = 1  # exercise broadcasting
            return [rng.standard_normal(shape), rng.standard_normal(other)], {"w": rng.standard_normal(shape)}
        return _case(name, make, lambda xs, aux: _weighted(op(xs[0], xs[1]), aux["w"]))

    cases += [binary("add", T.add), binary("sub", T.sub), binary("mul", T.mul)]
    cases += [unary("neg", T.neg), unary("scale", lambda x: T.scale(x, -1.7)),
              unary("log", T.log, positive=True), unary("exp", T.exp), unary("gelu", T.gelu),
              unary("softmax", T.softmax), unary("log_softmax", T.log_softmax)]

    def make_masked_softmax(rng):
        shape = _shape(rng, 2, 4, ndim=3)
        mask = rng.random((shape[0], 1, shape[2])) > 0.3
        mask[..., 0] = True
        return [rng.standard_normal(shape)], {"w": rng.standard_normal(shape), "mask": mask}
    cases.append(_case("softmax_masked", make_masked_softmax,
                       lambda xs, aux: _weighted(T.softmax(xs[0], mask=aux["mask"]), aux["w"])))

    def make_matmul(rng):
        b, m, k, n = (int(v) for v in rng.integers(1, 4, size=4))
        return [rng.standard_normal((b, m, k)), rng.standard_normal((k, n))], {"w": rng.standard_normal((b, m, n))}
    cases.append(_case("matmul", make_matmul, lambda xs, aux: _weighted(T.matmul(xs[0], xs[1]), aux["w"])))

    def make_bmm(rng):
        b, h, m, k, n = (int(v) for v in rng.integers(1, 4, size=5))
        return ([rng.standard_normal((b, h, m, k)), rng.standard_normal((b, h, k, n))],
                {"w": rng.standard_normal((b, h, m, n))})
    cases.append(_case("matmul_batched", make_bmm, lambda xs, aux: _weighted(T.matmul(xs[0], xs[1]), aux["w"])))

    def make_ln(rng):
        shape = _shape(rng, 1, 3, ndim=1) + (int(rng.integers(2, 6)),)
        n = shape[-1]
        return ([rng.standard_normal(shape), rng.uniform(0.5, 1.5, n), rng.standard_normal(n)],
                {"w": rng.standard_normal(shape)})
    cases.append(_case("layer_norm", make_ln,
                       lambda xs, aux: _weighted(T.layer_norm(xs[0], xs[1], xs[2], eps=1e-5), aux["w"])))

    def make_emb(rng):
        v, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        ids = rng.integers(0, v, size=(2, int(rng.integers(1, 5))))
        return [rng.standard_normal((v, d))], {"ids": ids, "w": rng.standard_normal(ids.shape + (d,))}
    cases.append(_case("embedding", make_emb, lambda xs, aux: _weighted(T.embedding(xs[0], aux["ids"]), aux["w"])))

    def make_rows(rng):
        n, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        rows = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        return [rng.standard_normal((n, d))], {"rows": rows, "w": rng.standard_normal((len(rows), d))}
    cases.append(_case("take_rows", make_rows, lambda xs, aux: _weighted(T.take_rows(xs[0], aux["rows"]), aux["w"])))

    def make_pick(rng):
        n, c = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        return [rng.standard_normal((n, c))], {"idx": rng.integers(0, c, size=n), "w": rng.standard_normal(n)}
    cases.append(_case("pick", make_pick, lambda xs, aux: _weighted(T.pick(xs[0], aux["idx"]), aux["w"])))

    def make_reshape(rng):
        a, b, c = (int(v) for v in rng.integers(1, 4, size=3))
        return [rng.standard_normal((a, b, c))], {"w": rng.standard_normal((a * b, c))}
    cases.append(_case("reshape", make_reshape,
                       lambda xs, aux: _weighted(T.reshape(xs[0], aux["w"].shape), aux["w"])))

    def make_transpose(rng):
        shape = _shape(rng, ndim=3)
        axes = tuple(int(a) for a in rng.permutation(3))
        return [rng.standard_normal(shape)], {"axes": axes,
                                              "w": rng.standard_normal(tuple(shape[a] for a in axes))}
    cases.append(_case("transpose", make_transpose,
                       lambda xs, aux: _weighted(T.transpose(xs[0], aux["axes"]), aux["w"])))

    def make_sum_axis(rng):
        shape = _shape(rng, ndim=3)
        axis = int(rng.integers(0, 3))
        out_shape = tuple(s for i, s in enumerate(shape) if i != axis)
        return [rng.standard_normal(shape)], {"axis": axis, "w": rng.standard_normal(out_shape)}
    cases.append(_case("sum", make_sum_axis, lambda xs, aux: _weighted(T.sum(xs[0], axis=aux["axis"]), aux["w"])))
    cases.append(_case("mean", make_sum_axis, lambda xs, aux: _weighted(T.mean(xs[0], axis=aux["axis"]), aux["w"])))

    def make_dropout(rng):
        shape = _shape(rng)
        return [rng.standard_normal(shape)], {"seed": int(rng.integers(1 << 30)), "w": rng.standard_normal(shape)}
    cases.append(_case("dropout", make_dropout, lambda xs, aux: _weighted(
        T.dropout(xs[0], 0.3, np.random.default_rng(aux["seed"]), True), aux["w"])))

    def make_hard(rng):
        n, c = int(rng.integers(1, 5)), int(rng.integers(2, 7))
        return [rng.standard_normal((n, c)) * 2], {"golds": rng.integers(0, c, size=n)}
    cases.append(_case("hard_loss", make_hard, lambda xs, aux: hard_loss(xs[0], aux["golds"])))

    def make_soft(rng):
        n, c = int(rng.integers(1, 5)), int(rng.integers(2, 7))
        p = rng.dirichlet(np.ones(c), size=n)
        p[rng.random((n, c)) < 0.2] = 0.0
        p[:, 0] += 1e-3
        p /= p.sum(axis=1, keepdims=True)
        return [rng.standard_normal((n, c)) * 2], {"p": p}
    cases.append(_case("soft_loss", make_soft, lambda xs, aux: soft_loss(xs[0], aux["p"])))
    return cases


CASES = build_cases()


def check_case(name, make, fn, seed, h=1e-4):
    rng = np.random.default_rng(seed)
    arrays, aux = make(rng)
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    T.backward(fn(leaves, aux))

    def forward(*arrs):
        with T.no_grad():
            return fn([Tensor(a) for a in arrs], aux).item()

    numeric = central_differences(forward, arrays, h)
    for leaf, num in zip(leaves, numeric):
        assert leaf.grad is not None, f"{name}: no gradient reached a leaf"
        assert_grad_close(leaf.grad, num)
