import io
import math

import numpy as np
import pytest

from gridlessdoa import cli, evalkit, geometry as geo, mlt
from gridlessdoa.errors import ParseError


def write(path, text):
    path.write_text(text)
    return str(path)


PLANAR = """\
# comment line
virtual_dims = [1, 3, 6]
spacing = [0.5, 0.5, 0.5]
full_grid = true
"""


def manifest_text(array_name, **kw):
    lines = [f"array = {array_name}", f"solver = {kw.get('solver', 'l1')}"]
    if "virtual_dims" in kw:
        lines.append(f"virtual_dims = {kw['virtual_dims']}")
    lines += [f"trials = {kw.get('trials', 1)}", f"seed = {kw.get('seed', 7)}"]
    if "sweep" in kw:
        axis, values = kw["sweep"]
        lines += ["[sweep]", f"axis = {axis}", f"values = {values}"]
    scene = kw.get("scene", {})
    if scene:
        lines.append("[scene]")
        for key, val in scene.items():
            lines.append(f"{key} = {val}")
    params = kw.get("params", {})
    if params:
        lines.append("[solver_params]")
        for key, val in params.items():
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


class TestParsing:
    def test_array_full_grid(self, tmp_path):
        arr = cli.parse_array_file(write(tmp_path / "a.array", PLANAR))
        assert arr.dims == (1, 3, 6) and arr.n_antennas == 18 and arr.is_uniform()

    def test_array_positions(self, tmp_path):
        text = "virtual_dims = [1, 2, 2]\n[positions]\n0 0 0\n0 1 1\n"
        arr = cli.parse_array_file(write(tmp_path / "a.array", text))
        assert arr.n_antennas == 2

    def test_array_errors(self, tmp_path):
        with pytest.raises(ParseError):
            cli.parse_array_file(write(tmp_path / "a.array", "spacing = [1,1,1]\n"))
        with pytest.raises(ParseError):
            cli.parse_array_file(
                write(tmp_path / "b.array", "virtual_dims = [1,1,2]\n[positions]\n0 0\n")
            )
        with pytest.raises(ParseError):
            cli.parse_array_file(str(tmp_path / "missing.array"))

    def test_measurement_roundtrip(self, tmp_path):
        y = np.array([1 + 2j, -0.5 + 0.25j])
        text = "\n".join(f"{v.real},{v.imag}" for v in y) + "\n"
        got = cli.parse_measurement_file(write(tmp_path / "m.txt", text))
        assert np.array_equal(got, y)

    def test_measurement_errors(self, tmp_path):
        with pytest.raises(ParseError):
            cli.parse_measurement_file(write(tmp_path / "m.txt", "1.0\n"))
        with pytest.raises(ParseError):
            cli.parse_measurement_file(write(tmp_path / "m2.txt", ""))

    def test_generator_roundtrip(self, tmp_path):
        fs = geo.FrequencySet(1, np.array([[0.2], [0.6]]))
        M = mlt.mlt_from_atoms((1, 1, 4), fs, [1.0, 0.5])
        lines = ["dims = [1, 1, 4]", "[generator]"]
        for c in range(0, 4):  # only nonnegative lags;符 conjugates filled
            v = M.lag(0, 0, c)
            lines.append(f"0 0 {c} {v.real!r} {v.imag!r}")
        path = write(tmp_path / "g.gen", "\n".join(lines) + "\n")
        got = cli.parse_generator_file(path)
        assert np.abs(got.generator - M.generator).max() < 1e-12

    def test_manifest(self, tmp_path):
        write(tmp_path / "a.array", PLANAR)
        text = manifest_text(
            "a.array",
            sweep=("K", [1, 2]),
            scene={"K": 2, "snr_db": 10},
            params={"max_iterations": 500},
        )
        man = cli.parse_manifest(write(tmp_path / "m.manifest", text))
        assert man.solver == "l1" and man.values == (1.0, 2.0)
        assert man.k == 2 and man.snr_db == 10.0
        assert man.params.max_iterations == 500

    def test_manifest_rejects_unknown_params(self, tmp_path):
        write(tmp_path / "a.array", PLANAR)
        text = manifest_text("a.array", params={"bogus": 1})
        with pytest.raises(ParseError):
            cli.parse_manifest(write(tmp_path / "m.manifest", text))


class TestAnalyze:
    def test_planar_report(self, planar_array_file, capsys):
        assert cli.main(["analyze", str(planar_array_file)]) == 0
        out = capsys.readouterr().out
        assert "S_c=10, N_c=18, K_cor=4, K_conj=8" in out

    def test_cubic_report(self, cubic_array_file, capsys):
        assert cli.main(["analyze", str(cubic_array_file)]) == 0
        out = capsys.readouterr().out
        assert "S_c=10, N_c=32, K_cor=4, K_conj=15" in out

    def test_single_antenna_no_crash(self, tmp_path, capsys):
        text = "virtual_dims = [1, 1, 1]\n[positions]\n0 0 0\n"
        path = write(tmp_path / "one.array", text)
        assert cli.main(["analyze", path]) == 0
        assert "N_c=1" in capsys.readouterr().out

    def test_csv_output(self, planar_array_file, tmp_path):
        out = tmp_path / "report.csv"
        assert cli.main(["--out", str(out), "analyze", str(planar_array_file)]) == 0
        text = out.read_text()
        assert "S_c,10" in text and "K_conj,8" in text

    def test_parse_error_exit_code(self, tmp_path, capsys):
        path = write(tmp_path / "bad.array", "nonsense\n")
        assert cli.main(["analyze", path]) == 2
        assert capsys.readouterr().err.startswith("error:")


class TestDecompose:
    def test_roundtrip(self, tmp_path, capsys):
        fs = geo.FrequencySet(2, np.array([[0.3, 0.7]]))
        M = mlt.mlt_from_atoms((1, 3, 4), fs, [2.0])
        lines = ["dims = [1, 3, 4]", "[generator]"]
        X, Y, Z = 1, 3, 4
        for b in range(-Y + 1, Y):
            for c in range(-Z + 1, Z):
                v = M.lag(0, b, c)
                lines.append(f"0 {b} {c} {v.real!r} {v.imag!r}")
        path = write(tmp_path / "g.gen", "\n".join(lines) + "\n")
        assert cli.main(["decompose", path]) == 0
        rows = capsys.readouterr().out.strip().splitlines()
        assert rows[0] == "k,fx,fy,fz,power,amplitude_re,amplitude_im"
        vals = rows[1].split(",")
        assert abs(float(vals[2]) - 0.3) < 1e-8
        assert abs(float(vals[3]) - 0.7) < 1e-8
        assert abs(float(vals[4]) - 2.0) < 1e-8

    def test_rank_violation_exit_4(self, tmp_path, capsys):
        g = np.zeros((1, 1, 7), complex)
        g[0, 0, 3] = 1.0  # identity: full rank = Z
        lines = ["dims = [1, 1, 4]", "[generator]"]
        for c in range(-3, 4):
            v = complex(g[0, 0, c + 3])
            lines.append(f"0 0 {c} {v.real!r} {v.imag!r}")
        path = write(tmp_path / "g.gen", "\n".join(lines) + "\n")
        assert cli.main(["decompose", path]) == 4
        assert capsys.readouterr().err.startswith("error:")


class TestRecover:
    def fixture(self, tmp_path, k=1, seed=3):
        write(tmp_path / "a.array", PLANAR)
        man = write(
            tmp_path / "r.manifest",
            manifest_text("a.array", scene={"K": k}),
        )
        A = geo.embed_in_virtual(geo.ArrayDeployment.uniform([1, 3, 6]), [1, 3, 6])
        rng = np.random.default_rng(seed)
        truth = evalkit.sample_frequencies(k, 2, rng)
        y = evalkit.synthesize_measurement(evalkit.Scene(truth, 0.0, A, seed=seed), rng)
        meas = write(
            tmp_path / "y.txt", "\n".join(f"{float(v.real)!r},{float(v.imag)!r}" for v in y) + "\n"
        )
        return man, meas, truth

    def test_single_atom_roundtrip(self, tmp_path, capsys):
        man, meas, truth = self.fixture(tmp_path)
        assert cli.main(["recover", man, meas]) == 0
        rows = capsys.readouterr().out.strip().splitlines()
        assert len(rows) == 2
        vals = [float(v) for v in rows[1].split(",")]
        got = np.array([vals[2], vals[3]])
        want = truth.triples((1, 3, 6))[0, 1:]
        gap = np.minimum(np.abs(got - want), 1 - np.abs(got - want))
        assert gap.max() < 1e-6

    def test_zero_measurement(self, tmp_path, capsys):
        man, _, _ = self.fixture(tmp_path)
        meas = write(tmp_path / "zero.txt", "\n".join(["0,0"] * 18) + "\n")
        assert cli.main(["recover", man, meas]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out == ["k,fx,fy,fz,power,amplitude_re,amplitude_im"]

    def test_length_mismatch_exit_2(self, tmp_path, capsys):
        man, _, _ = self.fixture(tmp_path)
        meas = write(tmp_path / "short.txt", "1,0\n0,1\n")
        assert cli.main(["recover", man, meas]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_not_converged_exit_3_still_writes(self, tmp_path, capsys):
        write(tmp_path / "a.array", PLANAR)
        man = write(
            tmp_path / "r.manifest",
            manifest_text("a.array", solver="l0", virtual_dims=[1, 3, 10],
                          scene={"K": 9}),
        )
        A = geo.embed_in_virtual(geo.ArrayDeployment.uniform([1, 3, 6]), [1, 3, 10])
        rng = np.random.default_rng(11)
        truth = evalkit.sample_frequencies(10, 2, rng)
        y = evalkit.synthesize_measurement(evalkit.Scene(truth, 0.0, A, seed=1), rng)
        meas = write(
            tmp_path / "y.txt", "\n".join(f"{float(v.real)!r},{float(v.imag)!r}" for v in y) + "\n"
        )
        code = cli.main(["recover", man, meas])
        out = capsys.readouterr().out
        assert code == 3
        assert out.startswith("k,fx,fy,fz")


class TestMC:
    def test_byte_identical_reruns(self, tmp_path):
        write(tmp_path / "a.array", PLANAR)
        man = write(
            tmp_path / "mc.manifest",
            manifest_text("a.array", trials=1, sweep=("K", [1])),
        )
        out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        assert cli.main(["--out", str(out1), "mc", man]) == 0
        assert cli.main(["--out", str(out2), "mc", man]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        header = out1.read_text().splitlines()[0]
        assert header == "axis,value,mean_error,success_rate,failures,trials,mean_seconds"

    def test_seed_override_changes_output(self, tmp_path):
        write(tmp_path / "a.array", PLANAR)
        man = write(
            tmp_path / "mc.manifest",
            manifest_text("a.array", trials=2, sweep=("K", [2])),
        )
        out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        assert cli.main(["--out", str(out1), "mc", man]) == 0
        assert cli.main(["--out", str(out2), "--seed", "123", "mc", man]) == 0
        assert out1.read_bytes() != out2.read_bytes()


class TestTauSweep:
    def test_footer_rows(self, tmp_path):
        write(tmp_path / "a.array", PLANAR)
        man = write(
            tmp_path / "t.manifest",
            manifest_text(
                "a.array",
                solver="l2l1",
                trials=1,
                sweep=("tau", [0.9, 0.95]),
                scene={"K": 1, "snr_db": 20},
            ),
        )
        out = tmp_path / "tau.csv"
        assert cli.main(["--out", str(out), "tau-sweep", man]) == 0
        text = out.read_text()
        assert "tau_l," in text and "tau_u," in text and "tau_hat," in text
