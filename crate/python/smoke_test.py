"""Smoke test for the semrec_py extension.

Builds the extension with cargo, loads it from a temporary directory and
exercises the metrics, subword, charset, synthesis and recognizer bindings.

    python3 python/smoke_test.py
"""

import importlib.util
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FONT = ROOT / "crates/core/tests/fixtures/fonts/DejaVuSans.ttf"


def build_and_load():
    subprocess.run(["cargo", "build", "-p", "semrec-py"], cwd=ROOT, check=True)
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "debug"
    lib = next(p for p in (target / "libsemrec_py.so", target / "libsemrec_py.dylib") if p.exists())
    tmp = Path(tempfile.mkdtemp(prefix="semrec_py_"))
    dest = tmp / "semrec_py.so"
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("semrec_py", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module, tmp


def main():
    m, tmp = build_and_load()

    assert m.edit_ops("abcd", "abed") == (1, 0, 0, 1)
    assert m.edit_ops("kitten", "sitting")[3] == 3
    assert abs(m.cer([("abcd", "abed")]) - 0.25) < 1e-12
    assert m.wer([("apple", "apple"), ("pear", "peer")]) == 0.5

    assert m.extract_subwords("ab", l_min=2, l_max=3) == ["<a", "ab", "b>", "<ab", "ab>"]

    cs = m.Charset.from_words(["abc", "cab"])
    assert cs.vocab_size == 4 + 3
    ids = cs.encode("cab")
    assert cs.decode(ids) == "cab"
    try:
        cs.encode("xyz")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown characters should be rejected without unk=True")

    lexicon = ["apple", "bread", "chair", "dance", "eagle"]
    out = tmp / "synth"
    images, train, val, test, checksum = m.synthesize(lexicon, [str(FONT)], str(out), samples_per_word=2, seed=3)
    assert images == 10 and train + val + test == 10, (images, train, val, test)
    again = m.synthesize(lexicon, [str(FONT)], str(tmp / "synth2"), samples_per_word=2, seed=3)
    assert again[4] == checksum

    rec = m.Recognizer.untrained(["apple", "bread"], seed=1)
    h, w = rec.input_size
    text, log_prob = rec.predict_pixels([1.0] * (h * w), beam_width=3)
    assert isinstance(text, str) and log_prob <= 0.0
    assert set(text) <= set(rec.charset.chars)

    shutil.rmtree(tmp)
    print("semrec_py smoke test ok")


if __name__ == "__main__":
    sys.exit(main())
