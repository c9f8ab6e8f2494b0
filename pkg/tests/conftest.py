import pytest

from headway_lab.grid import GridSpec, fit_scaler, grid_from_log, normalize
from headway_lab.sim import default_line_config, generate_dataset
from headway_lab.trainer import TrainConfig, train
from headway_lab.windowing import WindowSpec, extract_samples, split_by_replication

# Small-but-real setup shared across test modules: a short line, a coarse
# grid and a tiny model so training fixtures run in seconds.
TINY_GRID = dict(t_start=55800.0, t_end=60600.0, delta_t=60.0,
                 n_distance_bins=16, d_min=0.0, d_max=35200.0)
TINY_WINDOW = WindowSpec(lookback=8, horizon=4)
TINY_FILTERS = 8


def tiny_line_config(**overrides):
    fields = dict(
        line_length=35200.0,
        block_length=1100.0,
        station_positions=(4400.0, 13200.0, 22000.0, 30800.0),
        short_turn_position=13200.0,
        short_turn_fraction=0.4,
        min_separation=90.0,
        service_start=54600.0,
        service_end=60600.0,
    )
    fields.update(overrides)
    return default_line_config(**fields)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Grids, scaler and normalized samples for a 5-replication tiny line."""
    config = tiny_line_config()
    spec = GridSpec(**TINY_GRID)
    logs = generate_dataset(config, n_replications=5, base_seed=300,
                            even_headway=300.0, jitter_sd=45.0)
    grids = {log.replication_id: grid_from_log(log, spec)[0] for log in logs}
    scaler = fit_scaler(list(grids.values()))
    samples = []
    for rep_id, grid in sorted(grids.items()):
        samples += extract_samples(normalize(grid, scaler), TINY_WINDOW,
                                   replication_id=rep_id)
    return {"config": config, "spec": spec, "grids": grids,
            "scaler": scaler, "samples": samples}


@pytest.fixture(scope="session")
def tiny_model(tiny_dataset):
    """A briefly trained tiny model plus its data splits."""
    train_set, val_set = split_by_replication(tiny_dataset["samples"], 0.2, seed=9)
    config = TrainConfig(epochs=6, batch_size=32, learning_rate=0.001,
                         patience=6, seed=3)
    params, history = train(train_set, val_set, config, init_seed=21,
                            filters=TINY_FILTERS)
    return {"params": params, "history": history,
            "train_set": train_set, "val_set": val_set,
            "scaler": tiny_dataset["scaler"]}
