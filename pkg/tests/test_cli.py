"""CLI and plotting tests, driven through main() in-process."""

import json
import socket
import threading
import time

import pytest

from deskrace.cli import main
from deskrace.dynamics import Action
from deskrace.env import EnvConfig, make
from deskrace.harness import load_results
from deskrace.plotting import TrajectoryFormatError, read_trajectory
from deskrace.protocol import action_message, declare, decode_message, encode_message
from deskrace.track import GeneratorSpec, generate_track, load_track, save_track


@pytest.fixture()
def ring_file(tmp_path):
    path = tmp_path / "ring.json"
    save_track(generate_track(GeneratorSpec("circle", radius=40.0)), path)
    return str(path)


def test_gen_track_writes_loadable_file(tmp_path, capsys):
    out = tmp_path / "t.json"
    assert main(["gen-track", "--spec", "circle", "--seed", "3", "--out", str(out)]) == 0
    track = load_track(out)
    assert track.id == "circle_s3"
    assert "circle_s3" in capsys.readouterr().out


def test_gen_track_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RACE_SEED", "17")
    out = tmp_path / "t.json"
    main(["gen-track", "--spec", "circle", "--out", str(out)])
    assert load_track(out).id == "circle_s17"


def test_gen_track_rejects_unknown_spec(tmp_path):
    with pytest.raises(SystemExit):
        main(["gen-track", "--spec", "nurburgring", "--out", str(tmp_path / "t.json")])


def test_eval_builtin_agent_and_store(ring_file, tmp_path, capsys):
    store = tmp_path / "results.jsonl"
    code = main(["eval", "--stage", "1", "--agent", "pure_pursuit",
                 "--track", ring_file, "--runs", "1", "--store", str(store),
                 "--participant", "baseline"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["sr"] == 1.0 and summary["participant"] == "baseline"
    results, skipped = load_results(store)
    assert skipped == 0 and len(results) == 1
    assert results[0].report.sr == 1.0


def test_eval_unknown_agent_errors(ring_file, capsys):
    code = main(["eval", "--stage", "1", "--agent", "winner",
                 "--track", ring_file])
    assert code == 2
    assert "winner" in capsys.readouterr().err


def test_leaderboard_renders_store(ring_file, tmp_path, capsys):
    store = tmp_path / "results.jsonl"
    main(["eval", "--stage", "1", "--agent", "pure_pursuit", "--track", ring_file,
          "--runs", "1", "--store", str(store), "--participant", "pp"])
    main(["eval", "--stage", "1", "--agent", "random", "--track", ring_file,
          "--runs", "1", "--store", str(store), "--participant", "rnd",
          "--max-episode-time", "5.0"])
    capsys.readouterr()
    assert main(["leaderboard", "--stage", "1", "--cameras", "single",
                 "--store", str(store)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split() == ["rank", "participant", "SR", "AATS", "NSI"]
    assert out[1].split()[:2] == ["1", "pp"]
    assert out[2].split()[:2] == ["2", "rnd"]


def test_leaderboard_empty_store(tmp_path, capsys):
    assert main(["leaderboard", "--stage", "2", "--cameras", "multi",
                 "--store", str(tmp_path / "none.jsonl")]) == 0
    assert "no stage-2" in capsys.readouterr().out


def test_serve_command_session(ring_file, capsys):
    with socket.create_server(("127.0.0.1", 0)) as probe:
        port = probe.getsockname()[1]

    box = {}

    def run_server():
        box["code"] = main(["serve", "--track", ring_file,
                            "--listen", f"127.0.0.1:{port}",
                            "--dt", "0.1", "--max-episode-time", "2.0"])

    server = threading.Thread(target=run_server, daemon=True)
    server.start()
    sock = None
    for _ in range(100):
        try:
            sock = socket.create_connection(("127.0.0.1", port), timeout=1.0)
            break
        except OSError:
            time.sleep(0.05)
    assert sock is not None, "server never came up"
    reader = sock.makefile("r", encoding="utf-8")
    hello = decode_message(reader.readline().strip())
    assert hello.payload["track"] == "circle_s0"
    sock.sendall((encode_message(declare(["front"])) + "\n").encode())
    episodes = 0
    while True:
        line = reader.readline()
        if not line:
            break
        msg = decode_message(line.strip())
        if msg.type == "obs":
            sock.sendall((encode_message(action_message(0.0, 0.2)) + "\n").encode())
        elif msg.type == "episode_end":
            episodes += 1
        elif msg.type == "shutdown":
            break
    sock.close()
    server.join(timeout=30.0)
    assert box["code"] == 0 and episodes == 1
    assert "session 0: 1 episode(s)" in capsys.readouterr().out


def make_log(tmp_path):
    track = generate_track(GeneratorSpec("circle", radius=40.0))
    env = make(EnvConfig(track=track, dt=0.1, cameras=(), max_episode_time=3.0,
                         observation_mode="privileged", record_trajectory=True))
    env.reset()
    done = False
    while not done:
        done = env.step(Action(0.0, 0.5)).done
    log = tmp_path / "lap.csv"
    env.write_trajectory(log)
    return str(log)


def test_plot_writes_svg(tmp_path, ring_file, capsys):
    log = make_log(tmp_path)
    out = tmp_path / "lap.svg"
    assert main(["plot", "--log", log, "--out", str(out), "--track", ring_file]) == 0
    text = out.read_text()
    assert text.lstrip().startswith("<?xml") and "<svg" in text


def test_read_trajectory_validation(tmp_path):
    log = make_log(tmp_path)
    data = read_trajectory(log)
    assert len(data["t"]) == 31  # 30 steps plus the reset pose
    assert set(data) > {"t", "x", "y", "speed", "infraction"}
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(TrajectoryFormatError, match="header"):
        read_trajectory(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("t,x,y,heading,speed,steer,action_steering,"
                     "action_acceleration,segment,infraction\n")
    with pytest.raises(TrajectoryFormatError, match="no data"):
        read_trajectory(empty)


def test_plot_infraction_markers(tmp_path):
    # drive straight off the circle to guarantee at least one infraction row
    track = generate_track(GeneratorSpec("circle", radius=40.0))
    env = make(EnvConfig(track=track, dt=0.1, cameras=(), max_episode_time=30.0,
                         observation_mode="privileged", record_trajectory=True))
    env.reset()
    done = False
    while not done:
        done = env.step(Action(0.0, 1.0)).done
    log = tmp_path / "crash.csv"
    env.write_trajectory(log)
    data = read_trajectory(log)
    assert any(kind for kind in data["infraction"])
    out = tmp_path / "crash.svg"
    assert main(["plot", "--log", str(log), "--out", str(out)]) == 0
    assert "<svg" in out.read_text()
