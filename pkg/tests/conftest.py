import pytest

from rfenet.synthdata import SceneSpec, generate_dataset, write_dataset


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """8-sample 64x64 dataset, everything in the train split."""
    root = tmp_path_factory.mktemp("data") / "synthglass"
    base = SceneSpec(canvas=(64, 64), n_objects=2, rng_seed=0)
    samples = generate_dataset(base, 8, 11, ("rect", "ellipse", "polygon"))
    write_dataset(samples, root, split_fractions=(1.0, 0.0, 0.0))
    return root


@pytest.fixture(scope="session")
def split_root(tmp_path_factory):
    """10-sample dataset with train/val/test populated."""
    root = tmp_path_factory.mktemp("data") / "split"
    base = SceneSpec(canvas=(64, 64), n_objects=2, rng_seed=0)
    samples = generate_dataset(base, 10, 5, ("rect", "ellipse", "polygon"))
    write_dataset(samples, root)
    return root
