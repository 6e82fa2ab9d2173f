import pytest

from conftest import MODEL_FILES
from costpy.errors import ConfigError, UnknownEntityError
from costpy.params import CostTuple, SecurityParams
from costpy.profile import (
    ProfileRequest, compile_model, profile_demo, run_profile
)
from costpy.report import read_csv_entries, read_json


def test_one_compilation_for_every_framework():
    reports = run_profile(ProfileRequest("ABY3, CrypTen,Falcon", 'lenet'))
    assert [r.framework for r in reports] == ['ABY3', 'CrypTen', 'Falcon']
    assert len({r.fingerprint for r in reports}) == 1
    assert [r.params.m for r in reports] == [3, 2, 3]
    assert all(r.model == 'lenet' for r in reports)


def test_inference_labels():
    (report,) = run_profile(ProfileRequest(['ABY3'], 'lenet'))
    assert report.query_prefix('initial-dataloader') == \
        CostTuple(3 * 64 * 3 * 28 * 28, 1, 0, 0)
    assert report.query_contains('conv2d', 'forward')
    assert not report.query_contains('backward')


def test_batches_scale_inference_linearly():
    one = run_profile(ProfileRequest(['ABY3'], 'logreg'))[0]
    three = run_profile(ProfileRequest(['ABY3'], 'logreg', batches=3))[0]
    for label, cost in one.entries.items():
        if label == 'initial-dataloader':
            # Shared once, as one vector of all samples.
            assert three.entries[label] == CostTuple(
                3 * cost.online_bits, cost.online_rounds, 0, 0
            )
        else:
            assert three.entries[label] == cost * 3


def test_batch_size_vectorizes_forward():
    one = run_profile(ProfileRequest(['ABY3'], 'logreg'))[0]
    four = run_profile(ProfileRequest(['ABY3'], 'logreg', batch_size=4))[0]
    label = 'initial-linear-forward'
    assert four.entries[label].online_bits == 4 * one.entries[label].online_bits
    assert four.entries[label].online_rounds == one.entries[label].online_rounds


def test_training_adds_backward_and_step():
    (report,) = run_profile(ProfileRequest(['ABY3'], 'lenet', mode='train'))
    assert report.query_contains('backward')
    assert report.query_prefix('initial-optimizer-step')
    assert 'initial-softmax-forward' in report.entries


def test_training_a_model_without_loss():
    request = ProfileRequest(
        ['ABY3'], str(MODEL_FILES / "transition_cnn.json"), mode='train'
    )
    with pytest.raises(ConfigError, match="loss"):
        run_profile(request)


def test_spec_file_fixes_batch_size():
    path = str(MODEL_FILES / "mlp_train.json")
    (report,) = run_profile(ProfileRequest(['ABY3'], path, batch_size=7))
    assert report.model == 'mlp'
    # 128 samples of 784 features are shared.
    assert report.query_prefix('initial-dataloader') == \
        CostTuple(3 * 64 * 128 * 784, 1, 0, 0)


def test_party_count_is_checked():
    with pytest.raises(ConfigError, match="parties"):
        run_profile(ProfileRequest(['ABY3'], 'logreg', parties=2))
    (report,) = run_profile(ProfileRequest(['SEMI2K'], 'logreg', parties=4))
    assert report.params.m == 4


def test_cheetah_defaults_override():
    base = run_profile(ProfileRequest(['Cheetah'], 'logreg'))[0]
    cheap = run_profile(ProfileRequest(
        ['Cheetah'], 'logreg', he_defaults={'lp': 1, 'bp': 1000, 'k': 5}
    ))[0]
    assert base.entries == cheap.entries


def test_unknown_names():
    with pytest.raises(UnknownEntityError):
        run_profile(ProfileRequest(['NoSuchMPC'], 'logreg'))
    with pytest.raises(UnknownEntityError):
        run_profile(ProfileRequest(['ABY3'], 'alexnet'))


@pytest.mark.parametrize('kwargs', [
    {'frameworks': []},
    {'frameworks': ",ABY3"},
    {'mode': 'finetune'},
    {'phase': 'setup'},
    {'group': 'layer'},
    {'fmt': 'xml'},
    {'batches': 0},
    {'batch_size': 0},
    {'workers': 0},
])
def test_invalid_requests(kwargs):
    args = {'frameworks': ['ABY3'], 'model': 'logreg'} | kwargs
    with pytest.raises(ConfigError):
        ProfileRequest(**args)


@pytest.mark.parametrize('fmt,ext', [('json', 'json'), ('csv', 'csv'),
                                     ('table', 'txt')])
def test_artifacts(tmp_path, fmt, ext):
    request = ProfileRequest(
        ['ABY3', 'ABY'], 'logreg', fmt=fmt, out_dir=tmp_path / "out",
        workers=2
    )
    reports = run_profile(request)
    for report in reports:
        path = tmp_path / "out" / f"logreg_{report.framework}.{ext}"
        assert path.exists()
        if fmt == 'json':
            assert read_json(path).entries == report.entries
        elif fmt == 'csv':
            assert read_csv_entries(path) == report.entries


def test_compile_model_is_deterministic():
    a = compile_model('lenet', mode='train')
    b = compile_model('lenet', mode='train')
    assert a.signature() == b.signature()


def test_demo_under_other_parameters():
    report = profile_demo('ABY3', SecurityParams(k=32, f=8, kappa_s=16))
    assert report.total() == CostTuple(192, 2, 0, 0)
