import numpy as np
import pytest

from shapeop.errors import ConfigError, PullbackError
from shapeop.pullback import (
    ConstantDiffusion,
    ConstantSource,
    ManufacturedSineSource,
    PiecewiseConstantDiffusion,
    TrigDiffusion,
    TrigSource,
    invert_field,
    pullback_diffusion_eulerian,
    pullback_diffusion_lagrangian,
    pullback_poisson,
    transport_solution,
)
from shapeop.shape_param import (
    AffineField,
    ConstantFeature,
    IdentityField,
    LinearFeature,
    ParamPoint,
    SQUARE,
    WeightSequence,
    check_uniformity,
    gamma_sequence,
    identity_atlas,
    make_atlas,
    sample_cube,
    sine_feature_catalog,
)

Y0 = ParamPoint(np.zeros(0))


def diag_atlas(a, b):
    return make_atlas(SQUARE, AffineField(np.diag([float(a), float(b)])), [],
                      WeightSequence((1.0,)), 0)


def sine_atlas(K=4, c=0.05):
    return make_atlas(SQUARE, IdentityField(), sine_feature_catalog(K),
                      WeightSequence.power(c, 2.0, K), K)


def interior_points(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, size=(n, 2))


# ---------------------------------------------------------------------------
# pullback_poisson
# ---------------------------------------------------------------------------

def test_poisson_identity_map():
    f = TrigSource(a=2.0)
    prob = pullback_poisson(identity_atlas(), Y0, f)
    pts = interior_points()
    C = prob.coefficient(pts)
    assert np.allclose(C, np.broadcast_to(np.eye(2), C.shape), atol=1e-15)
    assert np.allclose(prob.rhs(pts), f(pts), atol=1e-15)


def test_poisson_diagonal_closed_form():
    a, b = 2.0, 3.0
    f = TrigSource()
    prob = pullback_poisson(diag_atlas(a, b), Y0, f)
    pts = interior_points()
    C = prob.coefficient(pts)
    assert np.allclose(C, np.broadcast_to(np.diag([b / a, a / b]), C.shape), atol=1e-14)
    mapped = pts * np.array([a, b])
    assert np.allclose(prob.rhs(pts), f(mapped) * a * b, atol=1e-13)


def test_poisson_symmetry_and_sampled_ellipticity():
    # derived: spectral bounds from check_uniformity (d = 2, a_- = a_+ = 1)
    atlas = sine_atlas(K=4, c=0.06)
    rep = check_uniformity(atlas)
    y = sample_cube(17, 4)
    prob = pullback_poisson(atlas, y, ConstantSource())
    pts = interior_points(200, seed=4)
    C = prob.coefficient(pts)
    assert np.max(np.abs(C - np.swapaxes(C, -1, -2))) <= 1e-14
    ev = np.linalg.eigvalsh(C)
    lo = rep.sigma_min ** 2 / rep.sigma_max ** 2
    hi = rep.sigma_max ** 2 / rep.sigma_min ** 2
    assert np.min(ev) >= lo - 1e-12
    assert np.max(ev) <= hi + 1e-12


def test_poisson_rejects_orientation_reversing_map():
    atlas = make_atlas(SQUARE, AffineField(np.diag([-1.0, 1.0])), [],
                       WeightSequence((1.0,)), 0)
    prob = pullback_poisson(atlas, Y0, ConstantSource())
    with pytest.raises(PullbackError):
        prob.coefficient(np.array([[0.5, 0.5]]))


# ---------------------------------------------------------------------------
# Eulerian / Lagrangian diffusion
# ---------------------------------------------------------------------------

def test_eulerian_identity_diffusion_reduces_to_poisson():
    atlas = sine_atlas(K=3, c=0.05)
    y = sample_cube(2, 3)
    f = ConstantSource()
    pois = pullback_poisson(atlas, y, f)
    eul = pullback_diffusion_eulerian(atlas, y, ConstantDiffusion(np.eye(2)), f)
    pts = interior_points()
    assert np.allclose(eul.coefficient(pts), pois.coefficient(pts), atol=1e-14)


def test_eulerian_identity_map_returns_A():
    A = TrigDiffusion(base=2.0, amp=0.5)
    prob = pullback_diffusion_eulerian(identity_atlas(), Y0, A, ConstantSource())
    pts = interior_points()
    assert np.allclose(prob.coefficient(pts), A.matrix(pts), atol=1e-15)


def test_eulerian_scalar_multiple_closed_form():
    # A = 2I, J = diag(2, 3): coefficient = 2 * diag(3/2, 2/3) = diag(3, 4/3)
    prob = pullback_diffusion_eulerian(diag_atlas(2.0, 3.0), Y0,
                                       ConstantDiffusion(2.0 * np.eye(2)),
                                       ConstantSource())
    C = prob.coefficient(np.array([[0.25, 0.75]]))
    assert np.allclose(C[0], np.diag([3.0, 4.0 / 3.0]), atol=1e-14)


def test_lagrangian_identity_map_pointwise():
    A = PiecewiseConstantDiffusion(
        [("halfplane", 0, 0.5, "below", 2.0)], default=5.0)
    prob = pullback_diffusion_lagrangian(identity_atlas(), Y0, A, ConstantSource())
    pts = np.array([[0.25, 0.5], [0.75, 0.5]])
    C = prob.coefficient(pts)
    assert np.allclose(C[0], 2.0 * np.eye(2))
    assert np.allclose(C[1], 5.0 * np.eye(2))


def test_lagrangian_piecewise_blockwise_closed_form():
    # J = diag(2,1): coefficient = alpha_i * diag(1/2, 2) on each half
    A = PiecewiseConstantDiffusion(
        [("halfplane", 0, 0.5, "below", 3.0)], default=7.0)
    prob = pullback_diffusion_lagrangian(diag_atlas(2.0, 1.0), Y0, A, ConstantSource())
    C = prob.coefficient(np.array([[0.2, 0.4], [0.9, 0.4]]))
    assert np.allclose(C[0], 3.0 * np.diag([0.5, 2.0]), atol=1e-14)
    assert np.allclose(C[1], 7.0 * np.diag([0.5, 2.0]), atol=1e-14)


def test_eulerian_lagrangian_agree_for_constant_A():
    # derived: sampled equality to 1e-12 whenever A is spatially constant
    atlas = sine_atlas(K=4, c=0.06)
    y = sample_cube(9, 4)
    m = np.array([[2.0, 0.3], [0.3, 1.5]])
    f = ConstantSource()
    eul = pullback_diffusion_eulerian(atlas, y, ConstantDiffusion(m), f)
    lag = pullback_diffusion_lagrangian(
        atlas, y, ConstantDiffusion(m, frame_of_reference="lagrangian"), f)
    pts = interior_points(100, seed=8)
    assert np.max(np.abs(eul.coefficient(pts) - lag.coefficient(pts))) <= 1e-12


def test_frame_of_reference_tags_enforced():
    atlas = identity_atlas()
    A_lag = ConstantDiffusion(np.eye(2), frame_of_reference="lagrangian")
    with pytest.raises(ConfigError):
        pullback_diffusion_eulerian(atlas, Y0, A_lag, ConstantSource())
    with pytest.raises(ConfigError):
        pullback_diffusion_lagrangian(atlas, Y0, ConstantDiffusion(np.eye(2)),
                                      ConstantSource())


def test_determinant_identity_d2():
    # derived: det(coefficient) = det(A o V_y) for d = 2, sampled to 1e-12
    atlas = sine_atlas(K=3, c=0.05)
    y = sample_cube(5, 3)
    A = TrigDiffusion(base=2.0, amp=0.4)
    prob = pullback_diffusion_eulerian(atlas, y, A, ConstantSource())
    pts = interior_points(80, seed=2)
    C = prob.coefficient(pts)
    detC = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    from shapeop.shape_param import evaluate_field
    Am = A.matrix(evaluate_field(atlas, y, pts))
    detA = Am[..., 0, 0] * Am[..., 1, 1] - Am[..., 0, 1] * Am[..., 1, 0]
    assert np.max(np.abs(detC - detA)) <= 1e-12 * np.max(np.abs(detA))


def test_ellipticity_window_from_uniformity():
    # invariant: eigenvalues in [a_- smin^2/smax^2, a_+ smax^2/smin^2] (d=2)
    atlas = sine_atlas(K=4, c=0.05)
    rep = check_uniformity(atlas)
    A = TrigDiffusion(base=2.0, amp=0.5)
    a_minus, a_plus = A.ellipticity
    y = sample_cube(31, 4)
    prob = pullback_diffusion_eulerian(atlas, y, A, ConstantSource())
    ev = np.linalg.eigvalsh(prob.coefficient(interior_points(150, seed=9)))
    assert np.min(ev) >= a_minus * rep.sigma_min ** 2 / rep.sigma_max ** 2 - 1e-12
    assert np.max(ev) <= a_plus * rep.sigma_max ** 2 / rep.sigma_min ** 2 + 1e-12


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------

def test_transport_identity_map():
    atlas = identity_atlas()
    u = lambda x: np.asarray(x)[..., 0] ** 2
    fwd = transport_solution(atlas, Y0, u, "forward")
    pts = interior_points(10)
    assert np.allclose(fwd(pts), u(pts), atol=1e-12)


def test_transport_translation():
    atlas = make_atlas(SQUARE, IdentityField(), [ConstantFeature([0.1, 0.0])],
                       WeightSequence((1.0,)))
    y = ParamPoint([1.0])
    u = lambda x: np.asarray(x)[..., 0]
    fwd = transport_solution(atlas, y, u, "forward")
    p = np.array([0.6, 0.5])
    assert fwd(p) == pytest.approx(0.5, abs=1e-12)


def test_transport_round_trip():
    # derived: backward(forward(u)) = u to 1e-10 at random interior samples
    atlas = sine_atlas(K=4, c=0.06)
    y = sample_cube(12, 4)
    u = lambda x: np.sin(np.asarray(x)[..., 0]) + np.asarray(x)[..., 1] ** 2
    fwd = transport_solution(atlas, y, u, "forward")
    back = transport_solution(atlas, y, fwd, "backward")
    pts = interior_points(25, seed=3)
    assert np.max(np.abs(back(pts) - u(pts))) <= 1e-10


def test_invert_field_residual():
    atlas = sine_atlas(K=4, c=0.06)
    y = sample_cube(21, 4)
    from shapeop.shape_param import evaluate_field
    xs = interior_points(20, seed=6)
    ps = evaluate_field(atlas, y, xs)
    back = invert_field(atlas, y, ps)
    assert np.max(np.abs(back - xs)) <= 1e-10


def test_manufactured_source_value():
    f = ManufacturedSineSource()
    assert f(np.array([0.5, 0.5])) == pytest.approx(2.0 * np.pi ** 2)


def test_eulerian_rejects_non_spd_diffusion():
    from shapeop.pullback import DiffusionField, PulledBackProblem

    class Indefinite(DiffusionField):
        frame_of_reference = "eulerian"

        def matrix(self, pts):
            pts = np.asarray(pts, dtype=float)
            out = np.zeros(pts.shape[:-1] + (2, 2))
            out[..., 0, 0] = 1.0
            out[..., 1, 1] = -1.0
            return out

    prob = PulledBackProblem(identity_atlas(), Y0, ConstantSource(),
                             diffusion=Indefinite(), variant="diffusion_eulerian")
    with pytest.raises(PullbackError):
        prob.coefficient(np.array([[0.5, 0.5]]))


def test_invert_field_singular_jacobian():
    from shapeop.errors import TransportError
    from shapeop.shape_param import AffineField
    atlas = make_atlas(SQUARE, AffineField(np.zeros((2, 2))), [],
                       WeightSequence((1.0,)), 0)
    with pytest.raises(TransportError):
        invert_field(atlas, Y0, np.array([0.5, 0.5]))
