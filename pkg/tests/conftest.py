"""Shared fixtures: small synthetic trials and datasets."""
import json

import numpy as np
import pytest

from reachgrasp.data import (FamilyConfig, SynthConfig, TrialMeta, dumps_trial, synth_family,
                             synth_trial)

META = TrialMeta(user_id="U01", task="Hold", object="Cube", size="Medium", grasp_time=1.2, trial_id="U01-T001")


@pytest.fixture
def meta():
    return META


@pytest.fixture
def clean_trial():
    """Noiseless quintic reach (0,0,0) -> (0.3,0.2,0.1) over 1.2 s at 60 Hz."""
    return synth_trial(SynthConfig(), META)


@pytest.fixture
def noisy_trial():
    return synth_trial(SynthConfig(noise_sigma=0.005, seed=3), META)


@pytest.fixture
def trial_doc(clean_trial):
    """A valid trial as a decoded JSON document (for mutation tests)."""
    return json.loads(dumps_trial(clean_trial))


@pytest.fixture(scope="session")
def small_family():
    ds, _ = synth_family(FamilyConfig(n_users=3, trials_per_user=4, seed=11))
    return ds


@pytest.fixture(scope="session")
def both_hands_family():
    ds, _ = synth_family(FamilyConfig(n_users=3, trials_per_user=4, include_left=True, seed=5))
    return ds


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
