import numpy as np
import pytest

from gridscan import graphext as gx
from gridscan import pattern as pat
from gridscan import simulator as sim


@pytest.fixture(scope="session")
def vga_pattern():
    return pat.generate_pattern(24, 32, 16, 16, code_seed=7)


@pytest.fixture(scope="session")
def vga_rig(vga_pattern):
    return sim.default_rig(vga_pattern)


@pytest.fixture(scope="session")
def plane_scene():
    # fronto-parallel plane at z = 1 m
    return sim.PlaneScene(normal=(0.0, 0.0, -1.0), offset=-1.0)


@pytest.fixture(scope="session")
def plane_capture(plane_scene, vga_rig, vga_pattern):
    camera, projector = vga_rig
    capture = sim.render_capture(plane_scene, camera, projector, vga_pattern)
    capture.validate()
    return capture


@pytest.fixture(scope="session")
def vga_prior(vga_rig):
    camera, projector = vga_rig
    return gx.EpipolarPrior(camera=camera, projector=projector, nominal_depth=1.0)


@pytest.fixture(scope="session")
def plane_graph(plane_capture, vga_pattern, vga_prior):
    return gx.detect_graph(plane_capture.image, vga_pattern, calib=vga_prior)


@pytest.fixture(scope="session")
def plane_phase(plane_capture, vga_pattern, vga_prior):
    return gx.estimate_wrapped_phase(plane_capture.image, calib=vga_prior,
                                     pattern=vga_pattern)


@pytest.fixture(scope="session")
def plane_node_truth(plane_scene, vga_rig, vga_pattern):
    # margin covers the glyph footprint plus the frame strip the phase
    # estimator declares unmeasurable
    camera, projector = vga_rig
    xy, visible, _ = sim.project_pattern_nodes(plane_scene, camera, projector, vga_pattern,
                                               margin_px=16.0)
    return xy, visible


@pytest.fixture(scope="session")
def label_pattern():
    # lattice for labeling experiments, large enough for all candidate draws
    return pat.generate_pattern(20, 20, 16, 16, code_seed=1)


def circ_rmse(a, b, mask):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = (d + 0.5) % 1.0 - 0.5
    return float(np.sqrt(np.mean(d[mask] ** 2)))
