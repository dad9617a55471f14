import numpy as np
import pytest

from slipcontrol.errors import ConfigError, GeometryError
from slipcontrol.geometry import DomainSpec, build_domain, smooth_step, tangential_part


def test_rectangle_phi_and_normal(rect64):
    assert rect64.phi_at(np.array([1.0, 0.5])) == pytest.approx(0.5)
    assert np.allclose(rect64.normal_at(np.array([1.0, 0.0])), [0.0, -1.0])


def test_disk_phi_at_origin():
    d = build_domain(DomainSpec("disk", sigma=np.pi / 4, nx=16, ny=64))
    assert d.phi_at(np.array([0.0, 0.0])) == pytest.approx(1.0)


def test_phi_signs_and_collar_distance(rect64):
    pts = np.array([[0.3, 0.05], [1.5, 0.9], [-0.2, 0.5], [2.1, 0.4]])
    phi = rect64.phi_at(pts)
    assert phi[0] == pytest.approx(0.05) and phi[1] == pytest.approx(0.1)
    assert phi[2] < 0 and phi[3] < 0


def test_chi_cutoff(rect64):
    assert rect64.chi_at(np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert rect64.chi_at(np.array([1.0, 0.5])) == pytest.approx(0.0)


def test_controlled_tags_follow_sigma():
    d = build_domain(DomainSpec(sigma=("left",), nx=16, ny=16))
    assert set(d.uncontrolled_walls()) == {"bottom", "top", "right"}


@pytest.mark.parametrize("spec", [DomainSpec(sigma=()), DomainSpec(kitchen_depth=-1.0), DomainSpec(nx=4)])
def test_bad_specs(spec):
    with pytest.raises(ConfigError):
        build_domain(spec)


def test_tangential_part(rect64):
    p = np.array([1.0, 0.0])
    assert np.allclose(tangential_part(np.array([1.0, 0.0]), p, rect64), [1.0, 0.0])
    assert np.allclose(tangential_part(np.array([0.0, 1.0]), p, rect64), [0.0, 0.0])


def test_tangential_part_outside_collar(rect64):
    with pytest.raises(GeometryError):
        tangential_part(np.array([1.0, 0.0]), np.array([1.0, -3.0]), rect64)


def test_smooth_step_limits():
    t = np.linspace(-1, 2, 31)
    s = smooth_step(t)
    assert s.min() == 0.0 and s.max() == 1.0 and np.all(np.diff(s) >= 0)
