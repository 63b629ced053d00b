import numpy as np
import pytest

from splatprune.model import SH_COEFFS, CameraView, GaussianPrimitive, Scene
from splatprune.rasterizer import ContributionStream
from splatprune.synthetic import SynthSpec, gen_camera_ring, gen_ground_truth, gen_scene


def identity_camera(width=64, height=64, f=100.0, cx=32.0, cy=32.0, **kw):
    return CameraView(width, height, f, f, cx, cy, np.eye(3), np.zeros(3), **kw)


def make_primitive(position, scale=0.1, opacity_logit=0.0, rgb=(0.5, 0.5, 0.5), rotation=(1, 0, 0, 0)):
    sh = np.zeros((SH_COEFFS, 3))
    sh[0] = (np.asarray(rgb, dtype=float) - 0.5) / 0.28209479177387814
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (3,))
    return GaussianPrimitive(position, np.log(scale), rotation, opacity_logit, sh)


@pytest.fixture
def small_scene():
    return gen_scene(SynthSpec(seed=7, n_primitives=300))


@pytest.fixture
def ring():
    return gen_camera_ring(3, 4.0, resolution=(48, 40))


@pytest.fixture
def scene_with_gt(small_scene, ring):
    return small_scene, gen_ground_truth(small_scene, ring)


def single_scene(*prims):
    return Scene.from_primitives(prims)


def ray_stream(rays, *, opacity=None, colors=None):
    """Stream with one ray per entry of ``rays``; each ray is a front-to-back list of (id, alpha).

    Ray k sits at pixel (row=k, col=0) of view 0. Transmittance follows the
    compositing recurrence.
    """
    view, row, col, pid, alpha, trans = [], [], [], [], [], []
    for k, entries in enumerate(rays):
        t = 1.0
        for i, a in entries:
            view.append(0)
            row.append(k)
            col.append(0)
            pid.append(i)
            alpha.append(a)
            trans.append(t)
            t *= 1.0 - a
    m = len(pid)
    op = np.full(m, 0.5) if opacity is None else np.asarray(opacity, dtype=float)
    c = np.full((m, 3), 0.5) if colors is None else np.asarray(colors, dtype=float)
    return ContributionStream(view, row, col, pid, alpha, trans, op, c, np.zeros((m, 2)),
                              ((max(len(rays), 1), 1),))


def four_primitive_stream():
    """Four primitives G1..G4 (ids 0..3) hit by three rays.

    Ray A blends G2, G4, G1 with weights 0.5, 0.3, 0.1; ray B only G4 (0.4);
    ray C blends G3 then G4 with weights 0.35, 0.3.
    """
    return ray_stream([
        [(1, 0.5), (3, 0.6), (0, 0.5)],
        [(3, 0.4)],
        [(2, 0.35), (3, 0.3 / 0.65)],
    ])


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
