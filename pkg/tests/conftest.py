import numpy as np
import pytest
import torch

torch.set_num_threads(4)

TINY_CONFIG = """\
layers = 1
heads = 2
model_dim = 32
mlp_dim = 64
dropout = 0.0
seq_len = 60
timesteps = 8
steps = 4
batch_size = 2
checkpoint_every = 2
lr = 1e-3
optimizer = adan
"""


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def skel():
    from dancediff.skeleton import default_skeleton

    return default_skeleton()


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A small synthetic dataset plus a briefly trained checkpoint, shared by
    the pipeline and CLI tests (training quality is irrelevant here)."""
    from dancediff.config import parse_config
    from dancediff.pipeline import train_loop

    root = tmp_path_factory.mktemp("tiny_run")
    data = root / "data"
    runs = root / "runs"

    from dancediff.synth import synth_dataset

    synth_dataset(data, count=3, seed=0, seconds=2.0)

    cfg_path = root / "run.cfg"
    cfg_path.write_text(
        TINY_CONFIG + f"manifest = {data / 'manifest.json'}\nout_dir = {runs}\n"
    )
    cfg = parse_config(cfg_path)
    final = train_loop(cfg)
    return {
        "root": root,
        "data": data,
        "runs": runs,
        "config": cfg_path,
        "checkpoint": final,
        "features": data / "clip_0000.feat",
    }
