import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import trackfuse as tf


@pytest.fixture
def clean_scene():
    """Noise-free 6-view scene with 2 objects, plus its trajectories."""
    cfg = tf.SynthConfig(n_views=6, n_objects=2, seed=3)
    ds, gt = tf.generate_scene(cfg)
    trajectories = tf.import_tracks(ds)
    return ds, gt, trajectories


@pytest.fixture
def noisy_scene():
    cfg = tf.SynthConfig(
        n_views=8,
        n_objects=3,
        seed=7,
        noise=tf.NoiseSpec(synonym_rate=0.3, wrong_label_rate=0.1, mask_jitter=1),
    )
    ds, gt = tf.generate_scene(cfg)
    noisy = tf.corrupt(ds, gt, cfg)
    return noisy, gt
