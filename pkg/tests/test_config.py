from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiossl import config as C
from audiossl.errors import ConfigError

# (key, default, file value, flag value)
KEYS = {
    "train.learning_rate": (1e-4, 3e-4, 5e-3),
    "train.batch_size": (64, 16, 8),
    "train.epochs": (20, 3, 7),
    "train.tau": (0.995, 0.9, 0.5),
    "train.seed": (0, 11, 12),
    "loss.lambda_diversity": (1.0, 0.5, 2.0),
    "loss.lambda_decorrelation": (1.0, 0.25, 4.0),
    "probe.iterations": (300, 50, 20),
}


def get(cfg, dotted):
    section, key = dotted.split(".")
    return getattr(getattr(cfg, section), key)


def write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_match_published_recipe():
    cfg = C.Config()
    assert cfg.train.learning_rate == 1e-4 and cfg.train.tau == 0.995
    assert (cfg.loss.lambda_diversity, cfg.loss.lambda_decorrelation) == (1.0, 1.0)
    assert cfg.network.embedding_dim == 3072 and cfg.network.hidden_dim == 4096 and cfg.network.out_dim == 256


@settings(max_examples=60, deadline=None)
@given(in_file=st.sets(st.sampled_from(sorted(KEYS))), in_flags=st.sets(st.sampled_from(sorted(KEYS))))
def test_precedence_flags_over_file_over_defaults(tmp_path_factory, in_file, in_flags):
    sections: dict[str, list[str]] = {}
    for dotted in sorted(in_file):
        section, key = dotted.split(".")
        sections.setdefault(section, []).append(f"{key} = {KEYS[dotted][1]}")
    text = "\n".join(f"[{s}]\n" + "\n".join(lines) for s, lines in sections.items())
    path = write(tmp_path_factory.mktemp("cfg"), text)
    cfg = C.resolve(path, {k: KEYS[k][2] for k in in_flags})
    for dotted, (default, file_value, flag_value) in KEYS.items():
        want = flag_value if dotted in in_flags else file_value if dotted in in_file else default
        assert get(cfg, dotted) == want


def test_unset_flags_do_not_override(tmp_path):
    cfg = C.resolve(write(tmp_path, "[train]\nepochs = 3\n"), {"train.epochs": None})
    assert cfg.train.epochs == 3


@pytest.mark.parametrize(
    "text,line,match",
    [
        ("[train]\nepochs = 3\nbogus = 1\n", 3, "bogus"),
        ("[train]\n\n[nosuch]\n", 3, "nosuch"),
        ("# c\n[train]\nepochs = x\n", 3, "epochs"),
        ("[train]\ntau = 1.5\n", 2, "tau"),
        ("[train]\nbatch_size = 1\n", 2, "batch_size"),
        ("epochs = 3\n", 1, "section"),
        ("[train]\nepochs 3\n", 2, "key = value"),
        ("[train]\nepochs = 3\nepochs = 4\n", 3, "duplicate"),
        ("[loss]\nlambda_diversity = -1\n", 2, "lambda_diversity"),
        ("[train]\nlearning_rate = nan\n", 2, "learning_rate"),
    ],
)
def test_errors_carry_line_numbers(text, line, match):
    with pytest.raises(ConfigError, match=match) as info:
        C.loads(text)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_round_trip_through_text():
    cfg = replace(C.Config(), train=replace(C.Config().train, epochs=3, symmetric=True))
    assert C.loads(C.dumps(cfg)) == cfg
    assert C.from_dict(cfg.to_dict()) == cfg


def test_comments_booleans_and_tuples():
    cfg = C.loads("[train]  # section\nsymmetric = yes\n[augment]\nscale = 0.5, 1.5\n")
    assert cfg.train.symmetric is True and cfg.augment.scale == (0.5, 1.5)


def test_precision_selects_dtype():
    assert C.Config().network_config().dtype == "float32"
    assert C.loads("[train]\nprecision = double\n").network_config().dtype == "float64"
