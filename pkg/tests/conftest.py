import pytest

from oximap.synth import SynthParams, gen_subject


@pytest.fixture(scope="session")
def clean_record():
    """Noiseless, driftless subject at constant SpO2 95 (target ratio 0.5)."""
    params = SynthParams(
        duration_s=40,
        n_rois=8,
        spo2_baseline=95.0,
        dip_depth=0.0,
        drift_amp=0.0,
        noise_sigma=0.0,
        seed=11,
    )
    return gen_subject(params, "clean", index=0)
