"""Reference system: 7-state channel at 2 dB and five QAM/PSK settings."""

from __future__ import annotations

from importlib import resources

from .channel import FsmcChannel, SnrPartition, build_transition_matrix, calibrate_frame_period, db_to_linear
from .link import FerTable, SettingTable, load_fer_table

AVG_SNR_DB = 2.0
BOUNDARIES_DB = (2.0499, 4.0232, 5.6514, 7.0454, 8.2726, 9.3777)

SETTINGS = (
    {"label": "16-QAM 2/3", "frame_symbols": 2048, "data_bits_per_frame": 5461},
    {"label": "16-QAM 1/2", "frame_symbols": 2048, "data_bits_per_frame": 4096},
    {"label": "QPSK 2/3", "frame_symbols": 2048, "data_bits_per_frame": 2731},
    {"label": "QPSK 1/2", "frame_symbols": 2048, "data_bits_per_frame": 2048},
    {"label": "BPSK 1/2", "frame_symbols": 2048, "data_bits_per_frame": 1024},
)

# Neighbour transitions at 4 Hz: P(i -> i+1) and P(i+1 -> i)
TRANSITION_4HZ_UP = (0.0107, 0.0109, 0.0097, 0.0086, 0.0076, 0.0066)
TRANSITION_4HZ_DOWN = (0.0155, 0.0166, 0.0177, 0.0187, 0.0198, 0.0159)
TRANSITION_4HZ_STAY = (0.9893, 0.9736, 0.9737, 0.9737, 0.9737, 0.9736, 0.9841)

# The same per Hz of Doppler
TRANSITION_PER_HZ_UP = (0.00268, 0.00271, 0.00242, 0.00216, 0.00190, 0.00164)
TRANSITION_PER_HZ_DOWN = (0.00386, 0.00416, 0.00442, 0.00468, 0.00493, 0.00396)

SILENT_STATES = (1,)


def partition() -> SnrPartition:
    return SnrPartition.from_interior_db(BOUNDARIES_DB)


def settings() -> SettingTable:
    return SettingTable.from_records(SETTINGS)


def fer_csv() -> str:
    return resources.files("prada.data").joinpath("fer_table.csv").read_text()


def fer_table() -> FerTable:
    return load_fer_table(fer_csv(), settings(), partition().n_states)


def calibrated_frame_period() -> float:
    """Frame period fitted to the 4 Hz neighbour transition table."""
    return calibrate_frame_period(
        partition(), db_to_linear(AVG_SNR_DB), 4.0, TRANSITION_4HZ_UP, TRANSITION_4HZ_DOWN
    )


def channel(doppler_hz: float = 4.0, frame_period_s: float | None = None) -> FsmcChannel:
    if frame_period_s is None:
        frame_period_s = calibrated_frame_period()
    return build_transition_matrix(partition(), db_to_linear(AVG_SNR_DB), doppler_hz, frame_period_s)
