import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlp01.data import Dataset
from mlp01.models import (
    BnnParams,
    LinearParams,
    Mlp01Params,
    MlpParams,
    VoteEnsemble,
    ensemble_predict,
    forward_bnn,
    forward_mlp,
    forward_mlp01,
    sign,
    zero_one_loss,
)
from mlp01.serialize import (
    ModelFileError,
    ModelKindError,
    dumps_model,
    load_ensemble,
    load_model,
    loads_model,
    save_ensemble,
    save_model,
)


def rand_mlp01(rng, d=3, k=2):
    return Mlp01Params(rng.standard_normal((d, k)), rng.standard_normal(k), rng.standard_normal(k), rng.standard_normal())


def rand_layers(rng, widths):
    Ws = [rng.standard_normal((a, b)) for a, b in zip(widths[:-1], widths[1:])]
    bs = [rng.standard_normal(b) for b in widths[1:]]
    return tuple(Ws), tuple(bs)


def test_sign_convention():
    assert sign(3.2) == 1
    assert sign(-0.001) == -1
    assert sign(0.0) == 1
    assert sign(-0.0) == 1
    assert list(sign(np.array([-2.0, 0.0, 5.0]))) == [-1, 1, 1]


def test_mlp01_single_unit():
    p = Mlp01Params(np.array([[1.0], [0.0]]), [0.0], [1.0], 0.0)
    assert forward_mlp01(p, np.array([0.3, -5.0])) == 1
    assert forward_mlp01(p, np.array([-0.3, 5.0])) == -1


def test_mlp01_matches_straight_line(rng):
    p = rand_mlp01(rng)
    X = rng.standard_normal((10, 3))
    for x, got in zip(X, forward_mlp01(p, X)):
        h = []
        for j in range(2):
            s = sum(p.W[i, j] * x[i] for i in range(3)) + p.W0[j]
            h.append(1 if s >= 0 else -1)
        out = sum(p.w[j] * h[j] for j in range(2)) + p.w0
        assert got == (1 if out >= 0 else -1)


def test_mlp01_antisymmetry(rng):
    p = rand_mlp01(rng, 5, 4)
    q = Mlp01Params(p.W, p.W0, -p.w, -p.w0)
    X = rng.standard_normal((200, 5))
    # exact ties at the output are measure-zero for continuous weights
    assert np.all(forward_mlp01(q, X) == -forward_mlp01(p, X))


def test_mlp01_rejects_bad_dims(rng):
    p = rand_mlp01(rng)
    with pytest.raises(ValueError):
        p.predict(np.zeros(4))
    with pytest.raises(ValueError):
        Mlp01Params(np.zeros((3, 2)), np.zeros(3), np.zeros(2), 0.0)


@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_mlp01_positive_scaling_invariance(seed, scale):
    r = np.random.default_rng(seed)
    p = rand_mlp01(r, 4, 3)
    X = r.standard_normal((50, 4))
    j = seed % 3
    W, W0 = p.W.copy(), p.W0.copy()
    W[:, j] *= scale
    W0[j] *= scale
    col = Mlp01Params(W, W0, p.w, p.w0)
    out = Mlp01Params(p.W, p.W0, p.w * scale, p.w0 * scale)
    base = p.predict(X)
    assert np.array_equal(col.predict(X), base)
    assert np.array_equal(out.predict(X), base)


def test_zero_one_loss_cases():
    X = np.zeros((10, 1))
    y = np.array([1, -1] * 5)
    ds = Dataset(X, y)
    assert zero_one_loss(lambda X: y, ds) == 0.0
    flip = y.copy()
    flip[[0, 3, 7]] *= -1
    assert zero_one_loss(lambda X: flip, ds) == pytest.approx(0.3)
    one = Dataset(X, np.ones(10))
    assert zero_one_loss(lambda X: -np.ones(10), one) == 1.0
    with pytest.raises(ValueError):
        zero_one_loss(lambda X: X, Dataset(np.zeros((0, 1)), np.zeros(0)))


def test_zero_one_loss_antisymmetry_and_formula(rng):
    y = np.where(rng.random(1000) < 0.5, -1, 1)
    f = rng.standard_normal(1000)
    ds = Dataset(np.zeros((1000, 1)), y)
    pred = sign(f)
    a = zero_one_loss(lambda X: pred, ds)
    assert a + zero_one_loss(lambda X: -pred, ds) == pytest.approx(1.0)
    formula = np.sum(1 - sign(y * pred)) / (2 * 1000)
    assert a == formula == np.count_nonzero(pred != y) / 1000


def test_mlp_zero_weights_half():
    p = MlpParams((np.zeros((3, 2)), np.zeros((2, 1))), (np.zeros(2), np.zeros(1)))
    prob, lab = forward_mlp(p, np.array([0.2, 0.5, 0.9]))
    assert prob == 0.5 and lab == 1


def test_mlp_monotone_in_output_bias(rng):
    Ws, bs = rand_layers(rng, [3, 4, 1])
    x = rng.random(3)
    probs = [MlpParams(Ws, (bs[0], np.array([b]))).proba(x) for b in np.linspace(-5, 5, 21)]
    assert np.all(np.diff(probs) > 0)


def test_mlp_straight_line(rng):
    Ws, bs = rand_layers(rng, [3, 2, 2, 1])
    p = MlpParams(Ws, bs)
    x = rng.random(3)
    a = x
    for W, b in zip(Ws[:-1], bs[:-1]):
        a = np.array([1 / (1 + np.exp(-(sum(a[i] * W[i, j] for i in range(len(a))) + b[j]))) for j in range(W.shape[1])])
    z = sum(a[i] * Ws[-1][i, 0] for i in range(len(a))) + bs[-1][0]
    assert abs(p.proba(x) - 1 / (1 + np.exp(-z))) < 1e-12


def test_bnn_sign_collapse_and_scaling(rng):
    X = rng.random((40, 5))
    half = BnnParams((np.full((5, 3), 0.5), np.full((3, 1), 0.5)), (np.zeros(3), np.zeros(1)))
    ones = BnnParams((np.ones((5, 3)), np.ones((3, 1))), (np.zeros(3), np.zeros(1)))
    assert np.array_equal(half.output(X), ones.output(X))
    Ws, bs = rand_layers(rng, [5, 4, 3, 1])
    p = BnnParams(Ws, bs)
    for s in (10.0, 0.01, 3.7):
        assert np.array_equal(BnnParams(tuple(W * s for W in Ws), bs).predict(X), p.predict(X))


def test_bnn_small_nudge_keeps_predictions(rng):
    Ws, bs = rand_layers(rng, [5, 4, 1])
    Ws = (np.where(Ws[0] > 0, 0.5, -0.5), Ws[1])
    X = rng.random((40, 5))
    W0 = Ws[0].copy()
    W0[0, 0] += 0.1
    assert np.array_equal(BnnParams((W0, Ws[1]), bs).predict(X), BnnParams(Ws, bs).predict(X))


def test_bnn_explicit_matrices(rng):
    Ws, bs = rand_layers(rng, [4, 3, 1])
    p = BnnParams(Ws, bs)
    X = rng.random((10, 4))
    B0 = np.where(Ws[0] >= 0, 1.0, -1.0)
    B1 = np.where(Ws[1] >= 0, 1.0, -1.0)
    h = np.where(X @ B0 / 2.0 + bs[0] >= 0, 1.0, -1.0)
    out = np.where(h @ B1 / np.sqrt(3) + bs[1] >= 0, 1, -1)[:, 0]
    assert np.array_equal(forward_bnn(p, X), out)


class _Const:
    kind = "const"

    def __init__(self, labels):
        self.labels = np.asarray(labels)
        self.d = 1

    def predict(self, x):
        return self.labels


def test_ensemble_votes():
    assert ensemble_predict(VoteEnsemble((_Const([1, -1]),)), None).tolist() == [1, -1]
    e = VoteEnsemble(tuple(_Const([1]) for _ in range(60)) + tuple(_Const([-1]) for _ in range(40)))
    assert ensemble_predict(e, None).tolist() == [1]
    tie = VoteEnsemble((_Const([1, -1]), _Const([-1, 1])))
    assert ensemble_predict(tie, None).tolist() == [1, 1]


def test_ensemble_brute_force_and_order(rng):
    members = [rand_mlp01(rng, 6, 3) for _ in range(100)]
    X = rng.standard_normal((20, 6))
    e = VoteEnsemble(tuple(members))
    expect = []
    for x in X:
        plus = sum(1 for m in members if forward_mlp01(m, x) == 1)
        expect.append(1 if plus >= 100 - plus else -1)
    assert ensemble_predict(e, X).tolist() == expect
    perm = VoteEnsemble(tuple(members[i] for i in rng.permutation(100)))
    assert np.array_equal(perm.predict(X), e.predict(X))


def test_ensemble_rejects_mixed(rng):
    with pytest.raises(ValueError):
        VoteEnsemble(())
    with pytest.raises(ValueError):
        VoteEnsemble((rand_mlp01(rng), LinearParams(np.zeros(3), 0.0)))
    with pytest.raises(ValueError):
        VoteEnsemble((rand_mlp01(rng, 3), rand_mlp01(rng, 4)))


def _all_kinds(rng):
    return [
        LinearParams(rng.standard_normal(5), 0.3),
        rand_mlp01(rng, 5, 3),
        MlpParams(*rand_layers(rng, [5, 4, 2, 1])),
        BnnParams(*rand_layers(rng, [5, 3, 1])),
    ]


def _arrays(p):
    if isinstance(p, LinearParams):
        return [p.w, np.array(p.w0)]
    if isinstance(p, Mlp01Params):
        return [p.W, p.W0, p.w, np.array(p.w0)]
    return [*p.weights, *p.biases]


def test_model_round_trip_bitwise(tmp_path, rng):
    for p in _all_kinds(rng):
        path = save_model(p, tmp_path / f"{p.kind}.m01", {"seed": 4, "config_digest": "abc"})
        q, meta = load_model(path, p.kind)
        assert type(q) is type(p) and meta == {"seed": 4, "config_digest": "abc"}
        for a, b in zip(_arrays(p), _arrays(q)):
            assert a.tobytes() == b.tobytes()


def test_model_errors(rng):
    blob = dumps_model(rand_mlp01(rng))
    with pytest.raises(ModelKindError):
        loads_model(blob, "mlp")
    with pytest.raises(ModelFileError, match="magic"):
        loads_model(b"XXXX" + blob[4:])
    with pytest.raises(ModelFileError, match="checksum"):
        loads_model(blob[:20] + bytes([blob[20] ^ 1]) + blob[21:])
    with pytest.raises(ModelFileError):
        loads_model(blob[:-9])


def test_ensemble_round_trip(tmp_path, rng):
    e = VoteEnsemble(tuple(rand_mlp01(rng, 4, 2) for _ in range(3)))
    save_ensemble(e, tmp_path / "ens", {"config_digest": "d1"})
    back = load_ensemble(tmp_path / "ens", "mlp01")
    X = rng.standard_normal((30, 4))
    assert len(back) == 3 and np.array_equal(back.predict(X), e.predict(X))
    assert back.meta["metadata"] == {"config_digest": "d1"}
    with pytest.raises(ModelKindError):
        load_ensemble(tmp_path / "ens", "bnn")
    with pytest.raises(ModelFileError):
        load_ensemble(tmp_path / "nothing")
