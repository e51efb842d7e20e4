import json
import warnings
from collections import Counter

import mido
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import mido_notes, write_midi
from scoremeta.annotations import prototype_gt, read_ground_truth
from scoremeta.convert import (REGISTRY, ConversionError, ConverterEntry, ConverterRegistry,
                               convert_csv_notes, convert_label_track, convert_midi,
                               run_conversion)
from scoremeta.definitions import FrameworkConfig, parse_definition
from scoremeta.midi import DanglingNoteWarning, MidiError, extract_notes, read_midi


def note(pitch, on, dur, channel=0, velocity=80):
    """Absolute-tick message pair."""
    return [(on, mido.Message("note_on", note=pitch, velocity=velocity, channel=channel)),
            (on + dur, mido.Message("note_off", note=pitch, velocity=0, channel=channel))]


def to_track(abs_msgs):
    abs_msgs = sorted(abs_msgs, key=lambda x: x[0])
    out, last = [], 0
    for t, m in abs_msgs:
        out.append(m.copy(time=t - last))
        last = t
    return out


# csv

def test_listing4_row(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0.5,60,1.0\n")
    gt = convert_csv_notes(p, {"onset": 0, "pitch": 1, "duration": 2})
    nl = gt.precise_alignment
    assert nl.onsets == (0.5,) and nl.offsets == (1.5,) and nl.pitches == (60,)


def test_csv_empty_file(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("")
    assert len(convert_csv_notes(p).precise_alignment) == 0


def test_csv_three_rows_in_file_order(tmp_path):
    rows = ["2.0,64,0.5", "0.0,60,1.0", "1.0,62,0.25"]
    p = tmp_path / "a.csv"
    p.write_text("\n".join(rows) + "\n")
    nl = convert_csv_notes(p).precise_alignment
    assert len(nl) == len(p.read_text().splitlines())
    for i, row in enumerate(rows):
        on, pitch, dur = row.split(",")
        assert nl.onsets[i] == float(on)
        assert nl.offsets[i] == float(on) + float(dur)
        assert nl.pitches[i] == int(pitch)


def test_csv_options(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("pitch;start;end\n60;1;2\n")
    gt = convert_csv_notes(p, {"pitch": 0, "onset": 1, "offset": 2}, delimiter=";", skip_rows=1,
                           time_unit="beats", kind="non_aligned", instrument=40)
    assert gt.instrument == 40
    assert gt.non_aligned.onsets == (3.0,) and gt.non_aligned.offsets == (6.0,)


def test_csv_bad_row_reports_row_number(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0.0,60,1.0\nzero,61,1.0\n")
    with pytest.raises(ConversionError, match="row 2"):
        convert_csv_notes(p)


def test_csv_negative_duration(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0.0,60,-1.0\n")
    with pytest.raises(ConversionError, match="negative duration"):
        convert_csv_notes(p)


# midi

def test_midi_single_note_120bpm(tmp_path):
    msgs = [mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(120), time=0)] + to_track(
        note(60, 0, 480))
    gts = convert_midi(write_midi(tmp_path / "a.mid", [msgs]))
    assert len(gts) == 1
    nl = gts[0].precise_alignment
    assert nl.onsets == (0.0,) and nl.offsets == (0.5,) and nl.pitches == (60,)
    assert gts[0].instrument == 0


def test_midi_program_change(tmp_path):
    msgs = [mido.Message("program_change", program=40, time=0)] + to_track(note(67, 0, 240))
    gts = convert_midi(write_midi(tmp_path / "a.mid", [msgs]))
    assert [g.instrument for g in gts] == [40]


def test_midi_two_programs_two_records(tmp_path):
    msgs = to_track([(0, mido.Message("program_change", program=40, channel=0)),
                     (0, mido.Message("program_change", program=42, channel=1))]
                    + note(67, 0, 240, 0) + note(48, 0, 480, 1) + note(69, 240, 240, 0))
    path = write_midi(tmp_path / "a.mid", [msgs])
    gts = convert_midi(path)
    oracle = mido_notes(path)
    assert len(gts) == len({ch for ch, *_ in oracle}) == 2
    assert [g.instrument for g in gts] == [40, 42]
    assert sum(len(g.precise_alignment) for g in gts) == len(oracle)


def test_midi_drum_channel(tmp_path):
    msgs = to_track(note(36, 0, 100, channel=9))
    gts = convert_midi(write_midi(tmp_path / "a.mid", [msgs]))
    assert gts[0].instrument == 128


def test_midi_dangling_note_closes_at_track_end(tmp_path):
    msgs = to_track(note(60, 0, 480) + [(0, mido.Message("note_on", note=64, velocity=90))])
    msgs.append(mido.MetaMessage("end_of_track", time=960))
    path = write_midi(tmp_path / "a.mid", [msgs])
    with pytest.warns(DanglingNoteWarning):
        notes = extract_notes(read_midi(path))
    dangling = [n for n in notes if n.pitch == 64]
    assert dangling[0].end_tick == 480 + 960


def test_midi_corrupt_header(tmp_path):
    p = tmp_path / "bad.mid"
    p.write_bytes(b"RIFF....")
    with pytest.raises(MidiError):
        read_midi(p)


def test_midi_non_aligned_ignores_tempo(tmp_path):
    msgs = [mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(90), time=0)] + to_track(
        note(60, 480, 960))
    gts = convert_midi(write_midi(tmp_path / "a.mid", [msgs]), "non_aligned")
    assert gts[0].non_aligned.onsets == (3.0,) and gts[0].non_aligned.offsets == (9.0,)


def test_midi_format1_tempo_track(tmp_path):
    tempo = [mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(60), time=0),
             mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(120), time=480)]
    path = write_midi(tmp_path / "a.mid", [tempo, to_track(note(60, 0, 960))])
    nl = convert_midi(path)[0].precise_alignment
    assert nl.onsets == (0.0,)
    assert nl.offsets[0] == pytest.approx(1.5)  # one beat at 60 + one beat at 120


@st.composite
def midi_fixtures(draw):
    tpq = draw(st.sampled_from([96, 384, 480]))
    tempos = draw(st.lists(st.tuples(st.integers(0, 4000), st.integers(30, 240)), max_size=4))
    n_channels = draw(st.integers(1, 3))
    tracks = []
    for ch in range(n_channels):
        channel = draw(st.sampled_from([ch, 9])) if ch == n_channels - 1 else ch
        evs = [(0, mido.Message("program_change", channel=channel,
                                program=draw(st.integers(0, 127))))]
        for _ in range(draw(st.integers(0, 12))):
            evs += note(draw(st.integers(20, 100)), draw(st.integers(0, 4000)),
                        draw(st.integers(1, 1000)), channel, draw(st.integers(1, 127)))
        tracks.append(evs)
    meta = [(t, mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(b))) for t, b in tempos]
    fmt = draw(st.sampled_from([0, 1]))
    if fmt == 0:
        return tpq, 0, [to_track(meta + [e for t in tracks for e in t])]
    return tpq, 1, [to_track(meta)] + [to_track(t) for t in tracks]


@given(midi_fixtures())
@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_midi_matches_event_scan(tmp_path, fixture):
    tpq, fmt, tracks = fixture
    path = write_midi(tmp_path / "p.mid", tracks, ticks_per_beat=tpq, midi_type=fmt)
    oracle = mido_notes(path)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gts = convert_midi(path)
    got = [(p, on, off) for g in gts for p, on, off in zip(
        g.precise_alignment.pitches, g.precise_alignment.onsets, g.precise_alignment.offsets)]
    assert len(got) == len(oracle)
    assert Counter(p for p, _, _ in got) == Counter(n for _, n, _, _ in oracle)
    want = sorted((n, on, off) for _, n, on, off in oracle)
    for (p, on, off), (q, won, woff) in zip(sorted(got), want):
        assert p == q
        assert on == pytest.approx(won, abs=1e-6)
        assert off == pytest.approx(woff, abs=1e-6)


# label tracks

def test_label_track_note(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("0.0\t60\t0.5\n")
    gt = convert_label_track(p)
    assert gt.precise_alignment.offsets == (0.5,)


def test_label_track_beats(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("0.0\n0.5\n1.0\n")
    assert convert_label_track(p).beats_non_aligned == (0.0, 0.5, 1.0)


def test_label_track_ten_rows(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("".join(f"{i * 0.5}\t{440.0 * 2 ** (i / 12)}\t0.25\tn{i}\n" for i in range(10)))
    gt = convert_label_track(p, value_unit="hz")
    assert len(gt.precise_alignment) == len(p.read_text().splitlines()) == 10
    assert gt.precise_alignment.pitches == tuple(range(69, 79))


def test_label_track_mixed_schema(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("0.0\t60\t0.5\n1.0\n")
    with pytest.raises(ConversionError, match="mixed"):
        convert_label_track(p)


# registry

def test_builtin_csv_resolvable_by_extension():
    assert REGISTRY.resolve("x/song.CSV").name == "csv_notes"
    assert REGISTRY.resolve("a.mid").name == "midi"


def test_registry_duplicate_name():
    reg = ConverterRegistry()
    reg.register(ConverterEntry("a", (".x",), lambda p: prototype_gt()))
    with pytest.raises(ValueError):
        reg.register(ConverterEntry("a", (".y",), lambda p: prototype_gt()))


def test_registry_shared_extension():
    reg = ConverterRegistry()

    @reg.convert([".txt"])
    def one(path):
        return prototype_gt()

    @reg.convert([".TXT"], name="two")
    def second(path):
        return [prototype_gt(), prototype_gt()]

    assert {e.name for e in reg.for_extension(".txt")} == {"one", "two"}
    assert reg.resolve("a.txt", name="two").name == "two"
    with pytest.raises(ConversionError, match="ambiguous"):
        reg.resolve("a.txt")
    assert len(reg.get("two")("a.txt")) == 2


def test_entry_needs_extension():
    with pytest.raises(ValueError):
        ConverterEntry("x", (), lambda p: None)


# run_conversion

def csv_dataset(root, n=3, converter="csv_notes"):
    songs, install = [], root / "install"
    for i in range(n):
        (install / "Tiny").mkdir(parents=True, exist_ok=True)
        (install / "Tiny" / f"s{i}.csv").write_text(f"0.0,{60 + i},1.0\n0.5,{62 + i},0.5\n1.0,64,0.25\n")
        songs.append({"composer": "X", "instruments": ["piano"], "recording": [f"Tiny/s{i}.wav"],
                      "ground_truth": [f"Tiny/s{i}.json.gz"]})
    doc = {"name": "Tiny", "ensemble": False, "instruments": ["piano"],
           "install": {"url": "https://example.org/tiny.zip", "converter": converter,
                       "source_suffix": ".csv"},
           "ground_truth": {"precise_alignment": 1}, "songs": songs}
    return parse_definition(json.loads(json.dumps(doc))), FrameworkConfig(install)


def test_run_conversion_three_songs(tmp_path):
    defn, cfg = csv_dataset(tmp_path)
    before = {p: p.read_bytes() for p in cfg.install_dir.rglob("*.csv")}
    report = run_conversion(defn, cfg)
    assert (report.n_written, report.n_failed) == (3, 0)
    written = sorted(cfg.install_dir.rglob("*.json.gz"))
    assert len(written) == 3
    assert read_ground_truth(written[1]).precise_alignment.pitches == (61, 63, 64)
    assert {p: p.read_bytes() for p in before} == before  # sources untouched


def test_run_conversion_is_pure(tmp_path):
    defn, cfg = csv_dataset(tmp_path)
    run_conversion(defn, cfg)
    first = {p: p.read_bytes() for p in cfg.install_dir.rglob("*.json.gz")}
    run_conversion(defn, cfg, max_workers=3)
    assert {p: p.read_bytes() for p in first} == first


def test_run_conversion_one_corrupt(tmp_path):
    defn, cfg = csv_dataset(tmp_path)
    (cfg.install_dir / "Tiny" / "s1.csv").write_text("0.0,sixty,1.0\n")
    report = run_conversion(defn, cfg)
    assert (report.n_written, report.n_failed) == (2, 1)
    [(src, msg)] = report.songs[1].failures
    assert src == "Tiny/s1.csv" and "row 1" in msg
    assert not (cfg.install_dir / "Tiny" / "s1.json.gz").exists()


def test_unknown_converter_errors_before_touching_files(tmp_path):
    defn, cfg = csv_dataset(tmp_path, converter="nope")
    snapshot = sorted(cfg.install_dir.rglob("*"))
    with pytest.raises(ConversionError, match="nope"):
        run_conversion(defn, cfg)
    assert sorted(cfg.install_dir.rglob("*")) == snapshot


def test_conversion_requires_install(tmp_path):
    defn, _ = csv_dataset(tmp_path)
    with pytest.raises(ConversionError, match="not installed"):
        run_conversion(defn, FrameworkConfig(tmp_path / "elsewhere"))


def test_fixture_collection_converts_to_shipped_records(fresh_collection):
    from scoremeta.definitions import load_definitions
    defn = {d.name: d for d in load_definitions([fresh_collection.definitions])}["PianoSolo"]
    cfg = FrameworkConfig(fresh_collection.install_dir)
    shipped = {p: read_ground_truth(p) for p in fresh_collection.install_dir.glob("PianoSolo/*.json.gz")}
    report = run_conversion(defn, cfg)
    assert report.n_failed == 0 and report.n_written == len(defn.songs)
    for p, gt in shipped.items():
        got, want = read_ground_truth(p).precise_alignment, gt.precise_alignment
        assert got.onsets == want.onsets and got.pitches == want.pitches
        assert got.offsets == pytest.approx(want.offsets, abs=1e-12)
