import json

import pytest

from ngram_transformer.cli import main
from ngram_transformer.ngram import load_lm
from ngram_transformer.transformer import dumps_model, load_model


@pytest.fixture
def lm_file(tmp_path, bigram):
    from ngram_transformer.ngram import save_lm
    path = tmp_path / "lm.json"
    save_lm(bigram, path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestGen:
    def test_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run(capsys, "gen", "-n", 3, "-a", "a,b", "--seed", 7, "-o", a)[0] == 0
        assert run(capsys, "gen", "-n", 3, "-a", "a,b", "--seed", 7, "-o", b)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        assert load_lm(a).order == 3

    def test_stdout(self, capsys):
        code, out, err = run(capsys, "gen", "-n", 2, "-a", "x,y")
        assert code == 0 and json.loads(out)["order"] == 2 and "fingerprint" in err

    def test_order_one_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "-n", "1", "-a", "a,b"])
        assert exc.value.code == 2
        assert "order must be >= 2" in capsys.readouterr().err


class TestCompileVerify:
    def test_sparse_pipeline(self, tmp_path, lm_file, capsys):
        model = tmp_path / "m.json"
        code, out, _ = run(capsys, "compile", lm_file, "-c", "sparse", "-o", model)
        assert code == 0 and "dimensions" in out
        code, out, _ = run(capsys, "verify", lm_file, model, "--max-len", 6)
        assert code == 0 and "exact: 127/127" in out

    def test_report_file(self, tmp_path, lm_file, capsys):
        model, report = tmp_path / "m.json", tmp_path / "r.json"
        run(capsys, "compile", lm_file, "-c", "singlehead", "-o", model)
        code, _, _ = run(capsys, "verify", lm_file, model, "--max-len", 3, "--report", report)
        data = json.loads(report.read_text())
        assert code == 0 and data["equivalent"] and "tolerance" not in data

    def test_multihead_float(self, tmp_path, lm_file, capsys):
        model = tmp_path / "m.json"
        code, out, _ = run(capsys, "compile", lm_file, "-c", "multihead", "-o", model)
        assert code == 0 and "margin" in out
        code, out, _ = run(capsys, "verify", lm_file, model, "--max-len", 4)
        assert code == 0 and "tol" in out

    def test_multihead_rational_rejected(self, lm_file, capsys):
        code, _, err = run(capsys, "compile", lm_file, "-c", "multihead", "--backend", "rational")
        assert code == 1 and "irrational encodings" in err

    def test_corrupted_model_fails(self, tmp_path, lm_file, capsys):
        model = tmp_path / "m.json"
        run(capsys, "compile", lm_file, "-c", "sparse", "-o", model)
        m = load_model(model)
        from dataclasses import replace
        from fractions import Fraction
        from ngram_transformer.numeric import ExtReal
        E = [list(r) for r in m.output]
        E[0][1] = ExtReal(Fraction(7, 11))
        model.write_text(dumps_model(replace(m, output=tuple(map(tuple, E)))))
        code, out, _ = run(capsys, "verify", lm_file, model, "--max-len", 3)
        assert code == 1 and "FAIL" in out.upper()

    def test_max_len_zero(self, tmp_path, lm_file, capsys):
        model = tmp_path / "m.json"
        run(capsys, "compile", lm_file, "-c", "sparse", "-o", model)
        code, out, _ = run(capsys, "verify", lm_file, model, "--max-len", 0)
        assert code == 0 and "exact: 1/1" in out

    def test_mismatched_files(self, tmp_path, lm_file, capsys):
        other = tmp_path / "o.json"
        run(capsys, "gen", "-n", 3, "-a", "a,b", "-o", other)
        model = tmp_path / "m.json"
        run(capsys, "compile", other, "-c", "sparse", "-o", model)
        code, _, err = run(capsys, "verify", lm_file, model)
        assert code == 1 and "disagree" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "compile", tmp_path / "nope.json", "-c", "sparse")
        assert code == 1 and err.startswith("error:")


class TestInspect:
    def test_multilayer(self, tmp_path, capsys):
        lm, model = tmp_path / "lm.json", tmp_path / "m.json"
        run(capsys, "gen", "-n", 3, "-a", "a,b", "-o", lm)
        run(capsys, "compile", lm, "-c", "multilayer", "-o", model)
        code, out, _ = run(capsys, "inspect", model, "ab")
        assert code == 0
        assert "layer 2 head 0" in out and "after layer 1" in out
        assert "decoded history index 5 = a b (true a b, index 5)" in out

    def test_unknown_symbol(self, tmp_path, lm_file, capsys):
        model = tmp_path / "m.json"
        run(capsys, "compile", lm_file, "-c", "sparse", "-o", model)
        code, _, err = run(capsys, "inspect", model, "az")
        assert code == 1 and "unknown symbol" in err


class TestEstimate:
    def test_mle(self, tmp_path, capsys):
        corpus = tmp_path / "c.txt"
        corpus.write_text("ab\nab\naa\n")
        out = tmp_path / "lm.json"
        assert run(capsys, "estimate", corpus, "-n", 2, "-o", out)[0] == 0
        lm = load_lm(out)
        from fractions import Fraction
        assert lm.conditional("a", ("<bos>",)) == 1
        assert lm.conditional("b", ("a",)) == Fraction(1, 2)
        assert lm.conditional("<eos>", ("a",)) == Fraction(1, 4)
        assert lm.conditional("<eos>", ("b",)) == 1

    def test_smoothing(self, tmp_path, capsys):
        corpus = tmp_path / "c.txt"
        corpus.write_text("a\n")
        out = tmp_path / "lm.json"
        run(capsys, "estimate", corpus, "-n", 2, "-a", "a,b", "--lambda", "1", "-o", out)
        from fractions import Fraction
        assert load_lm(out).conditional("a", ("<bos>",)) == Fraction(2, 4)
