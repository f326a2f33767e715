"""Environment tests: spawning, segment accounting, infractions, rendering."""

import csv
import math

import numpy as np
import pytest

from deskrace.dynamics import Action, VehicleState
from deskrace.env import (
    GROUND_TRUTH_CALIBRATION,
    CameraCalibration,
    EnvConfig,
    EnvError,
    Watchdog,
    make,
)
from deskrace.track import (
    GeneratorSpec,
    Track,
    generate_track,
    is_drivable,
    project,
    sample,
)

ZERO = Action(0.0, 0.0)


@pytest.fixture(scope="module")
def stadium():
    # 250 m straights, so the spawn and mid-straight poses see flat road
    # well past the 32 m camera horizon. Half-width 6 -> a 12 m lane.
    return generate_track(GeneratorSpec("stadium", radius=80.0, straight=250.0))


@pytest.fixture(scope="module")
def vegas():
    return generate_track(GeneratorSpec("vegas_standin"), seed=11)


def priv_config(track, **kw):
    kw.setdefault("observation_mode", "privileged")
    kw.setdefault("cameras", ())
    return EnvConfig(track=track, **kw)


def wrap_gap(track, a, b):
    gap = abs(a - b)
    return min(gap, track.total_length - gap)


def mid_straight_state(track, s, d=0.0, heading_offset=0.0, t=0.0):
    c = sample(track, s)
    nx, ny = -math.sin(c.heading), math.cos(c.heading)
    return VehicleState(
        x=c.point[0] + d * nx,
        y=c.point[1] + d * ny,
        heading=c.heading + heading_offset,
        speed=0.0,
        steer=0.0,
        t=t,
    )


# -- config validation -----------------------------------------------------

def test_make_rejects_bad_fields(stadium):
    with pytest.raises(EnvError, match="dt"):
        make(EnvConfig(track=stadium, dt=0.0))
    with pytest.raises(EnvError, match="dt"):
        make(EnvConfig(track=stadium, dt=0.2))
    with pytest.raises(EnvError, match="observation_mode"):
        make(EnvConfig(track=stadium, observation_mode="spectator"))
    with pytest.raises(EnvError, match="cameras"):
        make(EnvConfig(track=stadium, observation_mode="camera_only", cameras=()))
    with pytest.raises(EnvError, match="cameras"):
        make(EnvConfig(track=stadium, cameras=("front", "rear")))
    with pytest.raises(EnvError, match="n_segments"):
        make(EnvConfig(track=stadium, n_segments=0))
    with pytest.raises(EnvError, match="max_episode_time"):
        make(EnvConfig(track=stadium, max_episode_time=-1.0))


def test_camera_calibration_validation():
    with pytest.raises(EnvError, match="16x16"):
        CameraCalibration("tiny", width=8)
    with pytest.raises(EnvError, match="resolution"):
        CameraCalibration("bad", resolution=0.0)
    with pytest.raises(EnvError, match="yaw"):
        CameraCalibration("bad", yaw=float("nan"))


def test_watchdog_validation():
    with pytest.raises(EnvError, match="min_progress"):
        Watchdog(min_progress=0.0)
    with pytest.raises(EnvError, match="window"):
        Watchdog(window=-1.0)


# -- reset -----------------------------------------------------------------

def test_reset_spawns_stationary_at_first_segment(stadium):
    env = make(priv_config(stadium))
    obs = env.reset()
    assert obs.speed == 0.0
    assert env.state.speed == 0.0 and env.state.steer == 0.0
    frame = project(stadium, env.state.position)
    assert wrap_gap(stadium, frame.s, stadium.segment_starts[0]) < 0.01
    c = sample(stadium, stadium.segment_starts[0])
    assert abs(env.state.heading - c.heading) < 1e-9


def test_two_makes_same_seed_identical_first_observation(vegas):
    cfg = EnvConfig(track=vegas, cameras=("front", "left"))
    a = make(cfg, seed=3).reset()
    b = make(cfg, seed=3).reset()
    assert a.speed == b.speed
    for view in ("front", "left"):
        assert np.array_equal(a.cameras[view], b.cameras[view])


def test_reset_front_raster_is_symmetric(stadium):
    env = make(EnvConfig(track=stadium, cameras=("front",)))
    obs = env.reset()
    r = obs.cameras["front"]
    assert r.shape == (64, 64) and r.dtype == np.uint8
    assert np.array_equal(r, r[:, ::-1])


# -- camera rendering --------------------------------------------------------

def test_straight_road_band_is_24_cells_centered(stadium):
    env = make(EnvConfig(track=stadium, cameras=("front",)))
    env.reset()
    env.set_state(mid_straight_state(stadium, 50.0))
    r = env.render_camera("front")
    # 12 m of road at 0.5 m cells: columns 20..43 inclusive, every row.
    band = np.zeros(64, dtype=np.uint8)
    band[20:44] = 1
    assert np.array_equal(r, np.tile(band, (64, 1)))


def test_left_raster_mirrors_right_on_straight(stadium):
    env = make(EnvConfig(track=stadium, cameras=("front", "left", "right")))
    env.reset()
    env.set_state(mid_straight_state(stadium, 30.0))
    left = env.render_camera("left")
    right = env.render_camera("right")
    assert left.any() and not left.all()
    assert np.array_equal(left, right[:, ::-1])


def test_raster_cells_round_trip_to_is_drivable(vegas):
    env = make(
        EnvConfig(track=vegas, observation_mode="privileged", cameras=("front", "left", "right"))
    )
    env.reset()
    env.set_state(mid_straight_state(vegas, 137.0, d=1.2, heading_offset=0.3))
    st = env.state
    calibs = dict(env._calibs)
    calibs["ground_truth"] = GROUND_TRUTH_CALIBRATION
    for view, stride in (("front", 1), ("left", 3), ("right", 3), ("ground_truth", 3)):
        calib = calibs[view]
        raster = env.render_camera(view) if view != "ground_truth" else env._render(calib)
        total_yaw = st.heading + calib.yaw
        cv, sv = math.cos(total_yaw), math.sin(total_yaw)
        ch, sh = math.cos(st.heading), math.sin(st.heading)
        mx = st.x + ch * calib.mount[0] - sh * calib.mount[1]
        my = st.y + sh * calib.mount[0] + ch * calib.mount[1]
        for i in range(0, calib.height, stride):
            u = (i + 0.5) * calib.resolution
            for j in range(0, calib.width, stride):
                w = ((calib.width - 1) / 2.0 - j) * calib.resolution
                px = mx + cv * u - sv * w
                py = my + sv * u + cv * w
                assert bool(raster[i, j]) == is_drivable(vegas, (px, py)), (view, i, j)


# -- progress, reward, segments ----------------------------------------------

def test_legal_step_reward_is_arc_progress(stadium):
    env = make(priv_config(stadium))
    env.reset()
    s_prev = project(stadium, env.state.position).s
    total = 0.0
    for _ in range(100):
        out = env.step(Action(0.0, 0.5))
        assert out.info.infraction is None
        total += out.reward
        s_now = project(stadium, env.state.position).s
        step_ds = (s_now - s_prev) % stadium.total_length
        assert abs(out.reward - step_ds) < 1e-6
        s_prev = s_now
    assert total > 10.0


def test_segment_crossing_keeps_state(stadium):
    env = make(priv_config(stadium, dt=0.1))
    env.reset()
    out = None
    for _ in range(2000):
        prev_pos = env.state.position
        prev_speed = env.state.speed
        out = env.step(Action(0.0, 1.0))
        if out.info.segment_completed:
            break
    assert out is not None and out.info.segment_completed
    assert out.info.segment == 1
    assert out.info.infraction is None
    # crossing is bookkeeping only: the vehicle keeps rolling
    assert env.state.speed >= prev_speed
    moved = math.hypot(
        env.state.position[0] - prev_pos[0], env.state.position[1] - prev_pos[1]
    )
    assert moved <= env.config.vehicle.max_speed * 0.1 + 1e-6


def test_segment_index_never_decreases(vegas):
    env = make(priv_config(vegas, dt=0.1))
    rng = np.random.default_rng(5)
    env.reset()
    last = 0
    for _ in range(3000):
        act = Action(float(rng.uniform(-1, 1)), float(rng.uniform(-0.2, 1)))
        out = env.step(act)
        assert out.info.segment >= last
        last = out.info.segment
        if out.done:
            break
    assert out.done


# -- infractions --------------------------------------------------------------

def test_both_left_wheels_off_triggers_off_track(stadium):
    env = make(priv_config(stadium))
    env.reset()
    # lane edge at d = +6; center at d = 7 puts the left wheels 2 m past it
    # while the right wheels sit exactly on the boundary (still legal).
    env.set_state(mid_straight_state(stadium, 40.0, d=7.0))
    assert env.detect_infraction() == "off_track"
    out = env.step(ZERO)
    assert out.reward == -10.0
    assert not out.done
    inf = out.info.infraction
    assert inf is not None and inf.kind == "off_track"
    assert inf.segment == 0
    assert out.info.segment == 1
    # respawned stationary at the next segment start
    assert env.state.speed == 0.0
    frame = project(stadium, env.state.position)
    assert wrap_gap(stadium, frame.s, stadium.segment_starts[1]) < 0.01
    assert abs(frame.d) < 0.01


def test_one_wheel_off_is_legal(stadium):
    env = make(priv_config(stadium))
    env.reset()
    # center at d = 5.2 with a small twist: only the outer front corner leaves
    st = mid_straight_state(stadium, 40.0, d=5.35, heading_offset=0.25)
    env.set_state(st)
    from deskrace.dynamics import wheel_positions

    off = [not is_drivable(stadium, p) for p in wheel_positions(st, env.config.vehicle)]
    assert sum(off) == 1
    assert env.detect_infraction() is None


def test_infraction_on_last_segment_ends_episode(stadium):
    env = make(priv_config(stadium, n_segments=1))
    env.reset()
    env.set_state(mid_straight_state(stadium, 40.0, d=9.0))
    out = env.step(ZERO)
    assert out.done
    assert out.info.done_reason == "final_segment_infraction"
    assert not out.info.lap_completed
    res = env.episode_result()
    assert res.completed_segments == 0
    assert len(res.infractions) == 1
    with pytest.raises(EnvError, match="after episode done"):
        env.step(ZERO)


def obstacle_track():
    base = generate_track(GeneratorSpec("circle", radius=200.0))
    c = sample(base, 100.0)
    return Track(
        "circle_obstacle",
        points=base.centerline[::20],
        half_width_left=6.0,
        half_width_right=6.0,
        obstacles=((c.point[0], c.point[1], 0.5),),
    ), c


def test_collision_graze_oracle():
    track, c = obstacle_track()
    env = make(priv_config(track))
    env.reset()
    half_len = env.config.vehicle.footprint_length / 2.0
    fwd = np.array([math.cos(c.heading), math.sin(c.heading)])
    for gap, expect in ((0.01, None), (-0.01, "collision")):
        back = half_len + 0.5 + gap
        pos = np.array(c.point) - back * fwd
        env.set_state(
            VehicleState(x=pos[0], y=pos[1], heading=c.heading, speed=0.0, steer=0.0, t=0.0)
        )
        assert env.detect_infraction() == expect, gap


def test_infraction_priority_order():
    track, c = obstacle_track()
    env = make(priv_config(track, watchdog=Watchdog(1.0, 5.0)))
    env.reset()
    nx, ny = -math.sin(c.heading), math.cos(c.heading)
    # straddling the obstacle AND fully off the lane, long after the watchdog
    # window: off_track must win over both.
    env.set_state(
        VehicleState(
            x=c.point[0] + 8.0 * nx,
            y=c.point[1] + 8.0 * ny,
            heading=c.heading,
            speed=0.0,
            steer=0.0,
            t=100.0,
        )
    )
    assert env.detect_infraction() == "off_track"
    # on the obstacle but inside the lane: collision outranks no_progress
    env.set_state(
        VehicleState(
            x=c.point[0], y=c.point[1], heading=c.heading, speed=0.0, steer=0.0, t=200.0
        )
    )
    assert env.detect_infraction() == "collision"


def test_no_progress_fires_at_window_boundary(stadium):
    dt = 0.05
    window = 2.0
    env = make(priv_config(stadium, dt=dt, watchdog=Watchdog(1.0, window)))
    env.reset()
    fire_times = []
    for _ in range(200):
        out = env.step(ZERO)
        if out.info.infraction is not None:
            assert out.info.infraction.kind == "no_progress"
            fire_times.append(out.info.infraction.t)
            if len(fire_times) == 2:
                break
    assert len(fire_times) == 2
    assert abs(fire_times[0] - window) <= dt + 1e-9
    # the respawn re-arms the watchdog, so the second firing is one window later
    assert abs(fire_times[1] - fire_times[0] - window) <= dt + 1e-9


def test_watchdog_quiet_while_moving(stadium):
    env = make(priv_config(stadium, watchdog=Watchdog(1.0, 2.0)))
    env.reset()
    for _ in range(100):
        out = env.step(Action(0.0, 0.5))
        assert out.info.infraction is None


# -- episode accounting --------------------------------------------------------

def test_completions_plus_infractions_equal_segments(vegas, stadium):
    rng = np.random.default_rng(17)
    for track in (vegas, stadium):
        for _ in range(5):
            env = make(priv_config(track, dt=0.1))
            env.reset()
            for _ in range(200000):
                act = Action(float(rng.uniform(-1, 1)), float(rng.uniform(-0.2, 1)))
                out = env.step(act)
                if out.done:
                    break
            assert out.done
            res = env.episode_result()
            assert res.completed_segments + len(res.infractions) == res.total_segments
            assert res.total_segments == track.n_segments


def test_timeout_terminates_without_identity(stadium):
    env = make(priv_config(stadium, dt=0.05, max_episode_time=0.5))
    env.reset()
    out = None
    for _ in range(20):
        out = env.step(ZERO)
        if out.done:
            break
    assert out.done and out.info.done_reason == "timeout"
    assert abs(env.state.t - 0.5) < 1e-9
    res = env.episode_result()
    assert res.completed_segments == 0 and len(res.infractions) == 0


# -- observation modes -----------------------------------------------------------

def test_camera_only_hides_privileged_state(vegas):
    env = make(EnvConfig(track=vegas, observation_mode="camera_only", cameras=("front",)))
    obs = env.reset()
    assert obs.privileged is None
    assert set(obs.cameras) == {"front"}
    out = env.step(Action(0.0, 1.0))
    assert out.observation.privileged is None


def test_privileged_view_matches_state(vegas):
    env = make(priv_config(vegas))
    obs = env.reset()
    priv = obs.privileged
    assert priv is not None
    assert priv.pose == (env.state.x, env.state.y, env.state.heading)
    frame = project(vegas, env.state.position)
    assert wrap_gap(vegas, priv.frame.s, frame.s) < 0.01
    assert abs(priv.frame.d - frame.d) < 0.01
    mask = priv.mask
    assert mask.shape == (64, 64) and mask.dtype == np.uint8
    # the vehicle sits on the lane, so the cells around the pose are drivable
    assert mask[31, 31] == 1 and mask[32, 32] == 1
    assert priv.mask is mask


def test_rollout_is_deterministic(vegas):
    cfg = EnvConfig(track=vegas, cameras=("front",), dt=0.05)
    traces = []
    for _ in range(2):
        env = make(cfg, seed=9)
        obs = env.reset()
        rng = np.random.default_rng(23)
        rows = [obs.cameras["front"].copy()]
        speeds = [obs.speed]
        for _ in range(40):
            act = Action(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)))
            out = env.step(act)
            rows.append(out.observation.cameras["front"].copy())
            speeds.append(out.observation.speed)
        traces.append((rows, speeds))
    (rows_a, speeds_a), (rows_b, speeds_b) = traces
    assert speeds_a == speeds_b
    for a, b in zip(rows_a, rows_b):
        assert np.array_equal(a, b)


# -- misuse and logging ------------------------------------------------------------

def test_step_before_reset_raises(stadium):
    env = make(priv_config(stadium))
    with pytest.raises(EnvError, match="before reset"):
        env.step(ZERO)
    with pytest.raises(EnvError, match="before reset"):
        env.detect_infraction()


def test_episode_result_before_done_raises(stadium):
    env = make(priv_config(stadium))
    env.reset()
    with pytest.raises(EnvError, match="before the episode is done"):
        env.episode_result()


def test_trajectory_csv_round_trip(stadium, tmp_path):
    env = make(priv_config(stadium, record_trajectory=True))
    env.reset()
    for _ in range(10):
        env.step(Action(0.1, 0.8))
    env.set_state(mid_straight_state(stadium, 40.0, d=9.0, t=env.state.t))
    env.step(ZERO)
    path = tmp_path / "run.csv"
    env.write_trajectory(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [
        "t", "x", "y", "heading", "speed", "steer",
        "action_steering", "action_acceleration", "segment", "infraction",
    ]
    body = rows[1:]
    assert len(body) == 12  # reset pose + 11 steps
    times = [float(r[0]) for r in body]
    assert times == sorted(times)
    assert body[-1][9] == "off_track"
    assert all(r[9] == "" for r in body[:-1])
    floats = [float(v) for r in body for v in r[:8]]
    assert all(math.isfinite(v) for v in floats)


def test_trajectory_requires_recording(stadium, tmp_path):
    env = make(priv_config(stadium))
    env.reset()
    with pytest.raises(EnvError, match="recording"):
        env.write_trajectory(tmp_path / "x.csv")
