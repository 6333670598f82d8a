import numpy as np
import pytest

from fastslow.exceptions import PairInvariantError
from fastslow.standard_pairs import (
    PairConstants, StandardCurve, StandardDensity, StandardFamily, StandardPair,
    as_family, class_margins, constant_pair, default_constants, integrate,
    pushforward_decompose, random_admissible_pair, sample, sample_from_uniform,
    split_signed, validate_pair,
)


def test_integrate_normalization():
    pair = constant_pair([0.4], 0.1, 0.2, 1e-3)
    assert integrate(pair, lambda x, th: np.ones_like(x)) == pytest.approx(1.0, abs=1e-12)


def test_integrate_constant_curve_reads_theta():
    pair = constant_pair([0.4], 0.1, 0.2, 1e-3)
    assert integrate(pair, lambda x, th: th[..., 0]) == pytest.approx(0.4, abs=1e-12)


def test_integrate_uniform_mean():
    pair = constant_pair([0.0], 0.1, 0.6, 1e-3)
    assert integrate(pair, lambda x, th: x) == pytest.approx(0.35, abs=1e-12)


def test_default_margins_at_least_quarter(lin, cpl):
    for system in (lin, cpl):
        consts = default_constants(system)
        margins = class_margins(system, 1e-3, consts)
        assert min(margins["slope"], margins["curvature"], margins["logdensity"]) >= 0.25


def test_lin_decompose_full_circle(lin):
    # [0, 1/3] maps onto the whole circle; uniformity is preserved exactly
    consts = default_constants(lin)
    pair = constant_pair([0.7], 0.0, 1.0 / 3.0, 1e-3)
    out = pushforward_decompose(as_family(pair, consts), lin)
    assert len(out.pairs) == 10          # image length 1 cut into delta pieces
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(out.weights, 0.1, atol=1e-10)
    for p in out.pairs:
        assert np.allclose(p.density.values, p.density.values[0], atol=1e-9)


def test_decompose_eps_zero_keeps_constant_curves(lin):
    consts = default_constants(lin)
    pair = constant_pair([0.7], 0.1, 0.2, 0.0)
    out = pushforward_decompose(as_family(pair, consts), lin)
    for p in out.pairs:
        assert np.allclose(p.curve.values, 0.7, atol=1e-13)


@pytest.mark.parametrize("name", ["LIN", "CPL"])
def test_pushforward_identity(name, lin, cpl):
    system = {"LIN": lin, "CPL": cpl}[name]
    eps = 1e-3
    consts = default_constants(system)
    rng = np.random.default_rng(101)
    def g(x, th):
        return np.cos(2 * np.pi * x) * (1.0 + np.sin(2 * np.pi * th[..., 0]))
    for _ in range(6):
        pair = random_admissible_pair(system, eps, consts, rng)
        validate_pair(pair, consts)
        out = pushforward_decompose(as_family(pair, consts), system)
        out.validate()

        def g_pull(x, th):
            x1 = system.f(x, th)
            th1 = np.mod(th + eps * system.omega(x, th), 1.0)
            return g(x1, th1)

        lhs = integrate(out, g)
        rhs = integrate(pair, g_pull, refine=8)
        assert lhs == pytest.approx(rhs, abs=1e-7)


def test_iterated_decomposition_conserves_mass(lin):
    eps = 0.02
    consts = default_constants(lin)
    family = as_family(constant_pair([0.3], 0.2, 0.3, eps), consts)
    n = int(np.ceil(eps ** -0.5))
    for _ in range(n):
        family = pushforward_decompose(family, lin)
        assert family.mass_defect <= 1e-9
    assert family.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert len(family.pairs) < 20_000
    family.validate()


def test_sampling_uniform_inverse(lin):
    pair = constant_pair([0.5], 0.2, 0.3, 1e-3)
    u = np.array([0.0, 0.25, 0.5, 1.0 - 1e-12])
    x, th = sample_from_uniform(pair, u)
    assert np.allclose(x, 0.2 + 0.1 * u, atol=1e-12)
    assert np.all(th == 0.5)


def test_sampling_statistics(cpl):
    consts = default_constants(cpl)
    pair = random_admissible_pair(cpl, 1e-3, consts, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    x, th = sample_from_uniform(pair, rng.random(1_000_000))
    target = integrate(pair, lambda x, th: x)
    se = x.std(ddof=1) / 1000.0
    assert x.mean() == pytest.approx(target, abs=4 * se + 1e-5)
    # mean slow coordinate agrees with the pair functional as well
    mean_theta = integrate(pair, lambda x, th: th[..., 0])
    se_t = th[:, 0].std(ddof=1) / 1000.0
    assert th[:, 0].mean() == pytest.approx(mean_theta, abs=4 * se_t + 1e-6)


def test_sample_single_draw(cpl):
    consts = default_constants(cpl)
    pair = random_admissible_pair(cpl, 1e-3, consts, np.random.default_rng(3))
    x, th = sample(pair, np.random.default_rng(11))
    assert 0.0 <= x < 1.0
    assert th.shape == (1,)


def test_split_signed_reconstruction(cpl):
    consts = default_constants(cpl)
    pair = random_admissible_pair(cpl, 1e-3, consts, np.random.default_rng(5))
    psi = np.cos(2 * np.pi * pair.grid_x()) * pair.density.values
    (a1, p1), (a2, p2) = split_signed(pair, psi, consts.c2)
    recon = a1 * p1.density.values - a2 * p2.density.values
    assert np.abs(recon - psi).max() <= 1e-12
    validate_pair(p1, consts)
    validate_pair(p2, consts)


def test_serialization_roundtrip(cpl):
    consts = default_constants(cpl)
    rng = np.random.default_rng(17)
    fam = pushforward_decompose(
        as_family(random_admissible_pair(cpl, 1e-3, consts, rng), consts), cpl)
    clone = StandardFamily.loads(fam.dumps())
    assert len(clone.pairs) == len(fam.pairs)
    assert np.allclose(clone.weights, fam.weights)
    g = lambda x, th: np.sin(2 * np.pi * x) + th[..., 0] * 0
    assert integrate(clone, g) == pytest.approx(integrate(fam, g), abs=1e-14)
    with pytest.raises(PairInvariantError):
        StandardFamily.from_dict({"format": "other/9"})


def test_validation_rejects_bad_pairs():
    consts = PairConstants(delta=0.1, c1=10.0, c2=5.0, curv=10.0)
    # wrong interval length
    pair = constant_pair([0.1], 0.0, 0.5, 1e-3)
    with pytest.raises(PairInvariantError):
        validate_pair(pair, consts)
    # mass not normalized
    curve = StandardCurve(a=0.0, b=0.1, values=np.full((65, 1), 0.2), eps=1e-3)
    dens = StandardDensity(0.0, 0.1, np.full(65, 1.0))   # integrates to 0.1
    with pytest.raises(PairInvariantError):
        validate_pair(StandardPair(curve=curve, density=dens), consts)
    # curve slope beyond eps * c1
    xg = np.linspace(0.0, 0.1, 65)
    steep = StandardCurve(a=0.0, b=0.1, values=(0.5 + 0.05 * xg)[:, None], eps=1e-3)
    with pytest.raises(PairInvariantError):
        validate_pair(StandardPair(curve=steep,
                                   density=StandardDensity(0.0, 0.1, np.full(65, 10.0))),
                      consts)


def test_decompose_rejects_oversized_eps(cpl):
    consts = default_constants(cpl)
    pair = constant_pair([0.25], 0.2, 0.3, 5e-2)
    with pytest.raises(PairInvariantError):
        pushforward_decompose(as_family(pair, consts), cpl)


def test_theta_mean_matches_samples(cpl):
    consts = default_constants(cpl)
    pair = random_admissible_pair(cpl, 1e-3, consts, np.random.default_rng(23))
    mean = pair.theta_mean()
    _, th = sample_from_uniform(pair, np.random.default_rng(29).random(100_000))
    se = th[:, 0].std(ddof=1) / np.sqrt(100_000)
    assert mean[0] == pytest.approx(th[:, 0].mean(), abs=4 * se + 1e-6)
