import json

import numpy as np
import pytest
import scipy.sparse as sp

from classrescal import (
    ConfigurationError,
    DivergenceError,
    FactorModel,
    HyperParams,
    SingularityError,
    SparseRelationTensor,
    fit_rescal,
    init_model,
    objective_f,
    objective_h,
    update_a_unsupervised,
    update_r,
)
from classrescal.rescal import load_model, save_model

from oracles import explicit_a_update, explicit_kron_solve, objective_f_loops, random_binary_slices


def exact_tensor(rng, n=8, r=2, m=2):
    a = rng.standard_normal((n, r))
    rs = [rng.standard_normal((r, r)) for _ in range(m)]
    t = SparseRelationTensor.from_dense(np.stack([a @ q @ a.T for q in rs], axis=2), binary=False)
    return t, FactorModel(a, rs)


def test_hyperparam_defaults():
    p = HyperParams()
    assert (p.rank, p.lambda_a, p.lambda_r, p.lambda_g) == (5, 0.5, 0.5, 0.1)
    assert (p.epsilon, p.max_iter, p.k_neighbors) == (1e-4, 100, 5)


@pytest.mark.parametrize(
    "bad", [dict(rank=0), dict(lambda_a=-1), dict(k_neighbors=0), dict(epsilon=0), dict(max_iter=0)]
)
def test_hyperparam_validation(bad):
    with pytest.raises(ConfigurationError):
        HyperParams(**bad)


def test_init_deterministic(planted_small):
    tensor, _ = planted_small
    p = HyperParams(rank=3, seed=5)
    m1, m2 = init_model(tensor, p), init_model(tensor, p)
    assert np.array_equal(m1.a, m2.a)
    assert all(np.array_equal(x, y) for x, y in zip(m1.r_slices, m2.r_slices))
    assert m1.a.min() >= 0 and m1.a.max() < 1


def test_init_seed_changes_model(planted_small):
    tensor, _ = planted_small
    a0 = init_model(tensor, HyperParams(rank=3, seed=0)).a
    a1 = init_model(tensor, HyperParams(rank=3, seed=1)).a
    assert np.linalg.norm(a0 - a1) > 0


def test_init_rank_equals_n():
    t = SparseRelationTensor([sp.identity(4, format="csr")])
    m = init_model(t, HyperParams(rank=4))
    assert m.a.shape == (4, 4)


def test_init_rank_too_large():
    t = SparseRelationTensor([sp.identity(3, format="csr")])
    with pytest.raises(ConfigurationError):
        init_model(t, HyperParams(rank=4))


def test_init_r_solved_against_a(planted_small):
    tensor, _ = planted_small
    p = HyperParams(rank=2, seed=2)
    m = init_model(tensor, p)
    for t, r in zip(tensor.slices, m.r_slices):
        np.testing.assert_allclose(r, explicit_kron_solve(m.a, t, p.lambda_r), rtol=1e-8, atol=1e-10)


def test_objective_f_exact_zero(rng):
    t, model = exact_tensor(rng)
    assert objective_f(t, model) == pytest.approx(0.0, abs=1e-20)


def test_objective_zero_model(planted_small):
    tensor, _ = planted_small
    model = FactorModel(np.zeros((tensor.n_entities, 2)), [np.zeros((2, 2))] * tensor.n_relations)
    assert objective_f(tensor, model) == tensor.nnz
    assert objective_h(model, HyperParams()) == 0


def test_objective_f_matches_loops(rng):
    slices = random_binary_slices(rng, 5, 2)
    a = rng.standard_normal((5, 3))
    rs = [rng.standard_normal((3, 3)) for _ in range(2)]
    t = SparseRelationTensor(slices)
    assert objective_f(t, FactorModel(a, rs)) == pytest.approx(objective_f_loops(slices, a, rs), rel=1e-10, abs=1e-10)


def test_objective_h(rng):
    a = rng.random((4, 2))
    rs = [rng.random((2, 2)) for _ in range(3)]
    p = HyperParams(lambda_a=0.3, lambda_r=0.7)
    want = 0.3 * np.sum(a**2) + 0.7 * sum(np.sum(r**2) for r in rs)
    assert objective_h(FactorModel(a, rs), p) == pytest.approx(want, rel=1e-14)


def test_f_doubles_with_duplicated_slices(rng):
    slices = random_binary_slices(rng, 6, 2)
    a = rng.random((6, 2))
    rs = [rng.random((2, 2)) for _ in range(2)]
    f1 = objective_f(SparseRelationTensor(slices), FactorModel(a, rs))
    f2 = objective_f(SparseRelationTensor(slices + slices), FactorModel(a, rs + rs))
    assert f2 == pytest.approx(2 * f1, rel=1e-12)


def test_update_a_zero_tensor(rng):
    t = SparseRelationTensor([sp.csr_matrix((5, 5))] * 2)
    model = FactorModel(rng.random((5, 2)), [rng.random((2, 2)) for _ in range(2)])
    assert np.all(update_a_unsupervised(t, model, HyperParams(rank=2)) == 0)


def test_update_a_matches_oracle():
    rng = np.random.default_rng(21)
    slices = random_binary_slices(rng, 4, 2, density=0.5)
    a = rng.random((4, 2))
    rs = [rng.standard_normal((2, 2)) for _ in range(2)]
    p = HyperParams(rank=2, lambda_a=0.5)
    model = FactorModel(a.copy(), [r.copy() for r in rs])
    got = update_a_unsupervised(SparseRelationTensor(slices), model, p)
    np.testing.assert_allclose(got, explicit_a_update(slices, a, rs, 0.5), rtol=1e-9, atol=1e-12)
    # inputs untouched
    assert np.array_equal(model.a, a)


def test_update_a_fixed_point(rng):
    t, model = exact_tensor(rng, n=10, r=2, m=3)
    p = HyperParams(rank=2, lambda_a=0.0)
    f_before = objective_f(t, model)
    moved = FactorModel(update_a_unsupervised(t, model, p), model.r_slices)
    assert abs(objective_f(t, moved) - f_before) < 1e-8


def test_update_a_singular():
    t = SparseRelationTensor([sp.csr_matrix((3, 3))])
    model = FactorModel(np.zeros((3, 2)), [np.zeros((2, 2))])
    with pytest.raises(SingularityError):
        update_a_unsupervised(t, model, HyperParams(rank=2, lambda_a=0.0))


def test_update_r_exact_recovery(rng):
    t, model = exact_tensor(rng, n=9, r=2, m=1)
    got = update_r(t, FactorModel(model.a, [np.zeros((2, 2))]), HyperParams(rank=2, lambda_r=0.0))
    np.testing.assert_allclose(got[0], model.r_slices[0], atol=1e-8)


def test_update_r_permutation_equivariant(rng):
    slices = random_binary_slices(rng, 6, 3)
    a = rng.random((6, 2))
    p = HyperParams(rank=2)
    base = update_r(SparseRelationTensor(slices), FactorModel(a, []), p)
    perm = [2, 0, 1]
    permuted = update_r(SparseRelationTensor([slices[k] for k in perm]), FactorModel(a, []), p)
    for out, k in zip(permuted, perm):
        assert np.array_equal(out, base[k])


def test_update_r_matches_oracle(rng):
    slices = random_binary_slices(rng, 5, 3)
    a = rng.random((5, 2))
    p = HyperParams(rank=2, lambda_r=0.5)
    for got, t in zip(update_r(SparseRelationTensor(slices), FactorModel(a, []), p), slices):
        np.testing.assert_allclose(got, explicit_kron_solve(a, t, 0.5), rtol=1e-9, atol=1e-12)


def test_update_r_never_increases_f_plus_penalty(rng):
    for _ in range(20):
        slices = random_binary_slices(rng, 6, 2)
        t = SparseRelationTensor(slices)
        a = rng.random((6, 3))
        rs = [rng.standard_normal((3, 3)) for _ in range(2)]
        p = HyperParams(rank=3, lambda_r=0.5, lambda_a=0.0)
        before = FactorModel(a, rs)
        after = FactorModel(a, update_r(t, before, p))
        assert objective_f(t, after) + objective_h(after, p) <= objective_f(t, before) + objective_h(before, p) + 1e-12


def test_fit_exact_rank2():
    rng = np.random.default_rng(8)
    t, _ = exact_tensor(rng, n=20, r=2, m=3)
    p = HyperParams(rank=2, lambda_a=1e-9, lambda_r=1e-9, max_iter=50, seed=1)
    model, trace = fit_rescal(t, p)
    assert trace.iterations <= 50
    assert objective_f(t, model) / t.norm_sq() < 1e-6


def test_fit_max_iter_one(planted_small):
    tensor, _ = planted_small
    _, trace = fit_rescal(tensor, HyperParams(rank=3, max_iter=1))
    assert trace.iterations == 1
    assert not trace.converged


def test_fit_trace_components(planted_small):
    tensor, _ = planted_small
    p = HyperParams(rank=3, max_iter=10)
    model, trace = fit_rescal(tensor, p)
    last = trace.records[-1]
    assert last.g == 0
    assert last.f == pytest.approx(objective_f(tensor, model))
    assert last.h == pytest.approx(objective_h(model, p))
    assert last.objective == pytest.approx((last.f + last.h) / tensor.nnz)
    assert all(r.f >= 0 and r.h >= 0 for r in trace.records)


def test_fit_objective_nonincreasing_after_iteration_two(planted_small):
    tensor, _ = planted_small
    _, trace = fit_rescal(tensor, HyperParams(rank=3, epsilon=1e-8, max_iter=40))
    obj = trace.objectives
    assert np.all(np.diff(obj[1:]) <= 1e-12 * obj[1:-1])


def test_fit_deterministic(planted_small):
    tensor, _ = planted_small
    p = HyperParams(rank=3, seed=4, max_iter=15)
    m1, t1 = fit_rescal(tensor, p)
    m2, t2 = fit_rescal(tensor, p)
    assert np.array_equal(m1.a, m2.a)
    assert [r.objective for r in t1.records] == [r.objective for r in t2.records]


def test_fit_divergence_detected(planted_small, monkeypatch):
    tensor, _ = planted_small
    import classrescal.rescal as rescal_mod

    monkeypatch.setattr(rescal_mod, "objective_h", lambda model, params: float("nan"))
    with pytest.raises(DivergenceError) as err:
        fit_rescal(tensor, HyperParams(rank=2, max_iter=3))
    assert err.value.iteration == 1


def test_model_roundtrip(tmp_path, rng):
    model = FactorModel(rng.random((4, 2)), [rng.standard_normal((2, 2)) for _ in range(3)])
    save_model(tmp_path / "m.json", model, HyperParams(rank=2), method="rescal")
    back, payload = load_model(tmp_path / "m.json")
    assert np.array_equal(back.a, model.a)
    assert all(np.array_equal(x, y) for x, y in zip(back.r_slices, model.r_slices))
    assert payload["n_entities"] == 4 and payload["n_relations"] == 3 and payload["rank"] == 2
    raw = json.loads((tmp_path / "m.json").read_text())
    assert raw["a"][1] == model.a[1].tolist()  # row-major


def test_model_rejects_nan():
    with pytest.raises(ValueError):
        FactorModel(np.array([[np.nan]]), [np.zeros((1, 1))])
