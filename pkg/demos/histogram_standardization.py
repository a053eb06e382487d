"""
Histogram standardization
=========================

Volumes from different scanners share a tissue structure but not an
intensity scale.  Train percentile landmarks on a few of them and map a new
volume onto the common scale.
"""
import numpy as np

from voxelpipe.normalize import apply_histogram_model, percentiles_of, train_histogram_model
from voxelpipe.volume import Volume

rng = np.random.default_rng(1)


def scan(gain, offset):
    tissue = rng.choice([1.0, 2.0, 3.5], size=(20, 20, 20), p=[0.5, 0.3, 0.2])
    return Volume(gain * (tissue + rng.normal(0, 0.2, tissue.shape)) + offset, np.eye(4))


training = [scan(g, o) for g, o in [(100, 0), (40, 300), (250, -80)]]
model = train_histogram_model(training)
print("standard scale:", np.round(model.standard_scale, 2))

new = scan(7.0, 1000.0)
mapped = apply_histogram_model(new, model)
print("raw median:", np.median(new.data), "-> standardized:", np.median(mapped.data))

# the same scan on a different affine scale lands in the same place
rescaled = Volume(0.5 * new.data - 20.0, np.eye(4))
again = apply_histogram_model(rescaled, model)
print("max difference after rescaling:", np.abs(again.data - mapped.data).max())
print("landmarks now:", np.round(percentiles_of(mapped.data.ravel(), model.landmark_percentiles), 2))
