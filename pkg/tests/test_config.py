import math
import re

import pytest
from hypothesis import given, settings, strategies as st

from slipcontrol.config import DEFAULTS, default_config, defaults_table, load_config, parse_config
from slipcontrol.errors import ConfigError

LINE = re.compile(r":\d+: ")


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    for (s, k), (_, d, _, _) in DEFAULTS.items():
        v = cfg.get(s, k)
        if isinstance(d, float):
            assert v == pytest.approx(d)
        elif isinstance(d, str) and isinstance(v, tuple):
            assert ",".join(map(str, v)) == d or v == tuple(float(x) for x in d.split(","))


def test_values_and_lines_recorded():
    cfg = parse_config("# c\n[sweep]\neps = 0.2, 0.1,0.05\n\n[viscous]\nfriction = 1.5\n", "run.ini")
    assert cfg.get("sweep", "eps") == (0.2, 0.1, 0.05)
    assert cfg.get("viscous", "friction") == 1.5
    assert cfg.lines[("viscous", "friction")] == 6
    assert "line 6" in cfg.echo()


@pytest.mark.parametrize(
    "text, line, needle",
    [
        ("[domain]\nkitchen_depth = -1\n", 2, "kitchen_depth"),
        ("[domian]\n", 1, "unknown section"),
        ("[domain]\nfoo = 1\n", 2, "unknown key"),
        ("[domain]\nnx = 64\nnx = 32\n", 3, "duplicate"),
        ("nx = 64\n", 1, "outside"),
        ("[domain]\nnx\n", 2, "key = value"),
        ("[domain\n", 1, "malformed"),
        ("[domain]\nnx = 6.5\n", 2, "int"),
        ("[wpd]\ndesign = maybe\n", 2, "bool"),
        ("[layer]\ntheta = 0.3\n", 2, "theta"),
        ("[envelope]\nT = nan\n", 2, "float"),
        ("\n[wpd]\nK = 3\n", 3, "k_max"),
        ("[sweep]\neps = 0.0001\n", 2, "horizon"),
        ("[domain]\nsigma = left\n", 2, "sigma"),
        ("[domain]\nkind = disk\n", 2, "rectangle"),
    ],
)
def test_errors_name_the_line(text, line, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "bad.ini")
    msg = str(exc.value)
    assert msg.startswith(f"bad.ini:{line}: ") and needle in msg


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match=":0: "):
        load_config(tmp_path / "nope.ini")


def test_with_values_and_table():
    cfg = default_config().with_values(domain__nx=32, sweep__eps=(0.1,))
    assert cfg.get("domain", "nx") == 32 and cfg.get("sweep", "eps") == (0.1,)
    assert defaults_table().count("\n") == len(DEFAULTS) + 1


keys = st.sampled_from(sorted(DEFAULTS))
junk = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\r\n\x0b\x0c\x1c\x1d\x1e\x85  "), max_size=12)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(keys, junk), min_size=1, max_size=4), st.integers(0, 3))
def test_fuzzed_values_either_parse_or_name_a_line(pairs, junk_line):
    body = []
    for (s, k), raw in pairs:
        body += [f"[{s}]", f"{k} = {raw}"]
    text = "\n".join(body)
    try:
        cfg = parse_config(text, "fuzz.ini")
    except ConfigError as exc:
        assert LINE.search(str(exc))
    else:
        for v in cfg.values.values():
            assert not (isinstance(v, float) and not math.isfinite(v))
