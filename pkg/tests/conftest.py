import functools
import shutil
import threading
import zipfile
from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer

import mido
import pytest

from scoremeta.corpus import open_corpus
from scoremeta.definitions import load_config
from scoremeta.synthetic import build_fixture_collection


@pytest.fixture(scope="session")
def _collection_template(tmp_path_factory):
    return build_fixture_collection(tmp_path_factory.mktemp("collection"))


@pytest.fixture(scope="session")
def collection(_collection_template):
    """Read-only fixture collection shared across the session."""
    return _collection_template


@pytest.fixture
def fresh_collection(_collection_template, tmp_path):
    """Private copy for tests that write into the install tree."""
    dst = tmp_path / "collection"
    shutil.copytree(_collection_template.root, dst)
    from scoremeta.synthetic import FixturePaths
    return FixturePaths(dst, dst / "datasets.json", dst / "definitions", dst / "install")


@pytest.fixture(scope="session")
def config(collection):
    return load_config(collection.config, [collection.definitions])


@pytest.fixture(scope="session")
def corpus(config):
    return open_corpus(config)


def write_midi(path, tracks, ticks_per_beat=480, midi_type=1):
    """``tracks``: lists of mido messages with delta times in ticks."""
    mid = mido.MidiFile(type=midi_type, ticks_per_beat=ticks_per_beat)
    for msgs in tracks:
        track = mido.MidiTrack()
        track.extend(msgs)
        mid.tracks.append(track)
    mid.save(str(path))
    return path


def mido_notes(path):
    """Independent oracle: (channel, pitch, start_s, end_s) of paired notes,
    using mido's own playback clock for tick→seconds."""
    mid = mido.MidiFile(str(path))
    now = 0.0
    open_ = {}
    out = []
    for msg in mid:  # yields messages with time deltas in seconds, tempo applied
        now += msg.time
        if msg.type == "note_on" and msg.velocity > 0:
            open_.setdefault((msg.channel, msg.note), []).append(now)
        elif msg.type == "note_off" or (msg.type == "note_on" and msg.velocity == 0):
            stack = open_.get((msg.channel, msg.note))
            if stack:
                start = stack.pop(0)
                if now > start:
                    out.append((msg.channel, msg.note, start, now))
    return out


class _Handler(SimpleHTTPRequestHandler):
    """Static files with byte-range support and optional injected failures."""

    requests = None

    def log_message(self, *args):
        pass

    def do_GET(self):
        self.requests.append((self.path, self.headers.get("Range")))
        if self.server.failures_left > 0:
            self.server.failures_left -= 1
            self.send_error(503)
            return
        path = self.translate_path(self.path)
        try:
            with open(path, "rb") as f:
                data = f.read()
        except OSError:
            self.send_error(404)
            return
        rng = self.headers.get("Range")
        if rng and rng.startswith("bytes="):
            start = int(rng[6:].split("-")[0])
            if start >= len(data):
                self.send_error(416)
                return
            body = data[start:]
            self.send_response(206)
            self.send_header("Content-Range", f"bytes {start}-{len(data) - 1}/{len(data)}")
        else:
            body = data
            self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture
def http_server(tmp_path):
    """Serve ``tmp_path/www``; yields (base_url, www_dir, server).

    Set ``server.failures_left`` to answer that many requests with 503.
    """
    www = tmp_path / "www"
    www.mkdir()
    handler = type("H", (_Handler,), {"requests": []})
    server = ThreadingHTTPServer(("127.0.0.1", 0), functools.partial(handler, directory=str(www)))
    server.failures_left = 0
    server.requests = handler.requests
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}", www, server
    finally:
        server.shutdown()
        server.server_close()


def zip_dataset(src_dir, archive, prefix=""):
    """Zip the files of ``src_dir`` (optionally under a top-level ``prefix``)."""
    with zipfile.ZipFile(archive, "w") as zf:
        for p in sorted(src_dir.rglob("*")):
            if p.is_file():
                zf.write(p, prefix + p.relative_to(src_dir).as_posix())
    return archive


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
