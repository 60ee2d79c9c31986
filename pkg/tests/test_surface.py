import numpy as np
import pytest

from objmap.fields.checkpoint import load_field, save_field
from objmap.fields.network import FieldNetwork
from objmap.fields.surface import EmptySurfaceError, extract_isosurface, extract_surface

LO, HI = np.full(3, -1.0), np.full(3, 1.0)


def sphere(p):
    return (np.linalg.norm(p, axis=1) < 0.5).astype(np.float64)


def _max_error(res):
    surf = extract_isosurface(sphere, LO, HI, res)
    return np.abs(np.linalg.norm(surf.vertices, axis=1) - 0.5).max(), surf


@pytest.mark.parametrize("res", [16, 32, 64])
def test_sphere_within_one_cell(res):
    err, surf = _max_error(res)
    assert err <= 2.0 / (res - 1)
    assert surf.faces.max() < len(surf.vertices)


def test_resolution_doubling_reduces_error():
    errs = [_max_error(r)[0] for r in (16, 32, 64)]
    assert errs[0] > errs[1] > errs[2]


def test_constant_occupancy_is_empty():
    with pytest.raises(EmptySurfaceError):
        extract_isosurface(lambda p: np.full(len(p), 0.4), LO, HI, 16)
    with pytest.raises(ValueError):
        extract_isosurface(sphere, LO, HI, 1)


def test_surface_touching_box_is_closed():
    # everything occupied: the padding closes the surface at the box faces
    surf = extract_isosurface(lambda p: (p[:, 0] > -2).astype(float) * (p[:, 0] < 0.2), LO, HI, 12)
    assert surf.vertices[:, 0].min() >= -1 - 2 / 11 - 1e-9


def test_field_surface_and_checkpoint(tmp_path, rng):
    field = FieldNetwork.create(np.array([[0.0, 0, 0], [1, 1, 1]]), 4, rng, dtype=np.float64)
    # bias the occupancy head into a ball around the box centre
    field.params["wo"][:] = 0
    field.trained_steps = 1
    center = field.center.copy()
    surf_fn = lambda p: sphere((p - center) / 0.8)  # noqa: E731
    surf = extract_isosurface(surf_fn, *field.bounds, 24)
    assert np.all(surf.vertices >= field.bounds[0] - 1e-9)
    with pytest.raises(EmptySurfaceError):
        extract_surface(field, 16)
    save_field(tmp_path / "f.obck", field)
    back = load_field(tmp_path / "f.obck")
    assert all(np.array_equal(field.params[k], back.params[k]) for k in field.params)
    assert np.array_equal(back.center, field.center) and back.trained_steps == 1
