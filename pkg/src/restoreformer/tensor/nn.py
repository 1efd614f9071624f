"""Parameter-initialisation and layer helpers shared by the networks."""
import numpy as np

from . import ops


def add_conv(scope, name, kh, kw, cin, cout, rng, bias=True, gain=1.0):
    """Uniform(-b, b) weights with b = gain / sqrt(fan_in); zero bias."""
    bound = gain / np.sqrt(kh * kw * cin)
    scope.add(f"{name}.weight", rng.uniform(-bound, bound, (kh, kw, cin, cout)))
    if bias:
        scope.add(f"{name}.bias", np.zeros(cout))


def conv(scope, name, x, stride=1, pad=None):
    w = scope[f"{name}.weight"]
    b = scope[f"{name}.bias"] if f"{name}.bias" in scope else None
    if pad is None:
        pad = w.shape[0] // 2
    return ops.conv2d(x, w, b, stride=stride, pad=pad)


def add_norm(scope, name, channels):
    scope.add(f"{name}.gain", np.ones(channels))
    scope.add(f"{name}.bias", np.zeros(channels))


def group_norm(scope, name, x, groups=None):
    return ops.group_norm(x, scope[f"{name}.gain"], scope[f"{name}.bias"], groups=groups)
