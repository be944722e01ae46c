"""Small hand-built checkpoints and models shared by the tests."""
import numpy as np

from bsnn.convert import AnnCheckpoint, AnnLayer, convert_to_snn
from bsnn.netcore import Geometry, LayerKind, fc_geometry


def random_checkpoint(seed=0, in_shape=(1, 6, 6), enc=4, conv=6, classes=3, L=8,
                      residual=False, lam_scale=1.5) -> AnnCheckpoint:
    """Untrained but well-scaled checkpoint: encoder conv, binary conv, [residual], fc."""
    rng = np.random.default_rng(seed)
    geoms = [(LayerKind.ENCODER_CONV, Geometry(in_shape, enc, (3, 3), 1, 1))]
    geoms.append((LayerKind.BINARY_CONV, Geometry(geoms[0][1].out_shape, conv, (3, 3), 2, 1)))
    if residual:
        g = geoms[-1][1].out_shape
        geoms.append((LayerKind.BINARY_CONV, Geometry(g, conv, (3, 3), 1, 1)))
        geoms.append((LayerKind.RESIDUAL_ADD, Geometry(g, conv)))
    feat = int(np.prod(geoms[-1][1].out_shape))
    geoms.append((LayerKind.BINARY_FC, fc_geometry(feat, classes)))
    layers = []
    for i, (kind, g) in enumerate(geoms):
        c = g.out_channels
        fan = g.fan_in if kind is not LayerKind.RESIDUAL_ADD else 2
        lam = None if kind is LayerKind.RESIDUAL_ADD else \
            rng.normal(0, lam_scale, g.weight_shape).astype(np.float32)
        scale = np.sqrt(fan) * (255 if kind is LayerKind.ENCODER_CONV else 0.5)
        layers.append(AnnLayer(kind, g, gamma=rng.uniform(0.5, 1.5, c), beta=rng.normal(0.3, 0.2, c),
                               mu=rng.normal(0, 0.1, c) * scale, var=rng.uniform(0.5, 1.5, c) * scale**2,
                               s=float(rng.uniform(0.8, 1.5)), lam=lam,
                               skip=i - 2 if kind is LayerKind.RESIDUAL_ADD else -1))
    return AnnCheckpoint(layers, in_shape, classes, L)


def random_model(seed=0, **kw):
    return convert_to_snn(random_checkpoint(seed, **kw))


def random_images(model, n, seed=0):
    return np.random.default_rng(seed).integers(0, 256, (n, *model.input_shape)).astype(np.uint8)
