from fractions import Fraction

import pytest

from src.pegtransfer.calibration import ErrorField
from src.pegtransfer.errors import ConfigurationError, SafetyFault
from src.pegtransfer.executor import (
    AttemptPhase,
    AttemptRecord,
    AttemptResult,
    Direction,
    EpisodeRunner,
    ExecutorConfig,
    Jaw,
    MotionTimingConfig,
    PickPlaceAttempt,
    TransferJob,
    Waypoint,
    audit_trace,
    bilateral_schedule,
    execute_attempt,
    no_crossing,
    run_episode,
)
from src.pegtransfer.graspplan import default_arms, plan_grasp, plan_place
from src.pegtransfer.harness import aggregate
from src.pegtransfer.scene import BlockStatus, PlaceResult, Pose, StatusKind, resolve_place


def test_default_timing_sums_to_ten_seconds(timing):
    assert timing.attempt_s == pytest.approx(10.0)


def test_invalid_timing_is_rejected():
    with pytest.raises(ConfigurationError):
        MotionTimingConfig(grip_s=0.0).validate()


def test_record_requires_positive_duration():
    with pytest.raises(ValueError):
        AttemptRecord(0, "right", 0, Direction.LEFT_TO_RIGHT, AttemptResult.SUCCESS, 0.0)


def _attempt_on(scene, config, block_id, target_peg, settings=None, field=None, seed=0):
    arm = default_arms(config)["right"]
    block = scene.block(block_id)
    source = config.peg(config.left_peg_ids[block_id])
    grasp = plan_grasp(block.center, block.yaw, arm, source, config.block_edge)
    place = plan_place(config.peg(target_peg), arm, bilateral=False)
    return arm, grasp, place


class TestPickPlaceAttempt:
    def test_zero_error_attempt_succeeds(self, scene, config, timing, zero_field):
        arm, grasp, place = _attempt_on(scene, config, 0, 6)
        record = execute_attempt(scene, arm, 0, grasp, place, None, zero_field, timing, seed=1,
                                 target_peg=6)
        assert record.result == AttemptResult.SUCCESS
        assert record.duration_s == pytest.approx(10.0)
        assert scene.block(0).status.kind == StatusKind.ON_PEG
        assert scene.block(0).status.peg == 6

    def test_phases_run_in_order(self, scene, config, timing, zero_field):
        arm, grasp, place = _attempt_on(scene, config, 1, 7)
        block = scene.block(1)
        attempt = PickPlaceAttempt(scene, arm, 1, grasp, place, Pose(block.center, block.yaw), 7,
                                   None, zero_field, timing, ExecutorConfig(), seed=0)
        phases = [attempt.phase]
        while not attempt.done:
            phases.append(attempt.step())
        assert phases == [AttemptPhase.APPROACH, AttemptPhase.DESCEND, AttemptPhase.GRIP,
                          AttemptPhase.LIFT, AttemptPhase.TRANSFER, AttemptPhase.RELEASE,
                          AttemptPhase.DONE]
        assert audit_trace(attempt.trace, config.peg_top, 5.0) == []
        opened = [w for w in attempt.trace if w.jaw == Jaw.OPEN and w.height < 15.0]
        assert opened and all(w.window for w in opened)

    def test_large_offset_without_calibration_misses(self, scene, config, timing):
        arm, grasp, place = _attempt_on(scene, config, 0, 6)
        field = ErrorField.constant((0.0, 40.0))
        record = execute_attempt(scene, arm, 0, grasp, place, None, field, timing, seed=1,
                                 target_peg=6)
        assert record.result == AttemptResult.PICK_FAIL
        assert scene.block(0).status.kind == StatusKind.ON_PEG

    def test_low_open_height_is_a_safety_fault(self, scene, config, timing, zero_field):
        arm, grasp, place = _attempt_on(scene, config, 0, 6)
        settings = ExecutorConfig(clearance_mm=10.0, jaw_open_offset_mm=5.0)
        with pytest.raises(SafetyFault) as info:
            execute_attempt(scene, arm, 0, grasp, place, None, zero_field, timing, seed=1,
                            target_peg=6, settings=settings)
        assert info.value.waypoint.jaw == Jaw.OPEN
        assert info.value.waypoint.height < 20.0

    def test_block_held_by_other_arm(self, scene, config, timing, zero_field):
        arm, grasp, place = _attempt_on(scene, config, 0, 6)
        scene.block(0).status = BlockStatus.held("left")
        with pytest.raises(ValueError):
            execute_attempt(scene, arm, 0, grasp, place, None, zero_field, timing, seed=1)


def _job(slot, x, target, block_id=None):
    return TransferJob(slot, slot if block_id is None else block_id, slot, target, Pose((x, 25.0), 0.0))


class TestBilateralSchedule:
    def test_pairs_neighbouring_pegs(self, config):
        pegs = config.peg_positions
        jobs = [_job(s, pegs[s][0], 6 + s) for s in range(6)]
        rounds = bilateral_schedule(jobs, pegs)
        assert len(rounds) == 3
        for round_jobs in rounds:
            assert [j.arm for j in round_jobs] == ["left", "right"]
            assert no_crossing(round_jobs, pegs)

    def test_targets_follow_arm_sides(self, config):
        pegs = config.peg_positions
        jobs = [_job(0, 30.0, 7), _job(1, 70.0, 6)]
        (round_jobs,) = bilateral_schedule(jobs, pegs)
        assert round_jobs[0].target_peg == 6
        assert round_jobs[1].target_peg == 7

    def test_unpaired_job_keeps_its_side(self, config):
        pegs = config.peg_positions
        (round_jobs,) = bilateral_schedule([_job(3, 70.0, 9)], pegs)
        assert round_jobs[0].arm == "right"

    def test_crossing_round_is_detected(self, config):
        pegs = config.peg_positions
        left = TransferJob(0, 0, 0, 7, Pose((30.0, 25.0), 0.0), arm="left")
        right = TransferJob(1, 1, 1, 6, Pose((70.0, 25.0), 0.0), arm="right")
        assert not no_crossing([left, right], pegs)


class TestEpisode:
    def test_zero_error_single_episode(self, config, timing, zero_field, ground_truth):
        report = run_episode(config, "single", None, zero_field, timing, seed=0, settings=ground_truth)
        assert len(report.records) == 12
        assert all(r.result == AttemptResult.SUCCESS for r in report.records)
        assert report.episode_time_s == pytest.approx(120.0)
        assert [r.direction for r in report.records] == [Direction.LEFT_TO_RIGHT] * 6 + [Direction.RIGHT_TO_LEFT] * 6
        final = report.final_scene
        assert sorted(b.status.peg for b in final.blocks) == config.left_peg_ids

    def test_forced_pick_failure_is_retried(self, config, timing, zero_field, ground_truth):
        report = run_episode(config, "single", None, zero_field, timing, seed=0, settings=ground_truth,
                             forced_pick_failures={(Direction.LEFT_TO_RIGHT, 2)})
        results = [r.result for r in report.records]
        assert len(results) == 13
        assert results.count(AttemptResult.PICK_FAIL) == 1
        assert results.count(AttemptResult.SUCCESS) == 12
        recovery = [r for r in report.records if r.is_recovery_attempt]
        assert len(recovery) == 1 and recovery[0].block_id == 2
        assert recovery[0].result == AttemptResult.SUCCESS
        assert report.episode_time_s == pytest.approx(130.0)

    def test_zero_error_bilateral_timing(self, config, timing, zero_field, ground_truth):
        report = run_episode(config, "bilateral", None, zero_field, timing, seed=0, settings=ground_truth)
        assert len(report.records) == 12
        assert all(r.result == AttemptResult.SUCCESS for r in report.records)
        assert report.episode_time_s == pytest.approx(67.8)
        assert {r.arm for r in report.records} == {"left", "right"}

    def test_bilateral_without_overlap_is_sequential(self, config, zero_field, ground_truth):
        timing = MotionTimingConfig(bilateral_overlap=False)
        report = run_episode(config, "bilateral", None, zero_field, timing, seed=0, settings=ground_truth)
        assert report.episode_time_s == pytest.approx(120.0)

    def test_episode_is_deterministic(self, config, timing, ground_truth):
        field = ErrorField.build(4.5, seed=2020, release_sd=2.0, release_tumble_prob=0.08)
        rows = [
            [r.to_row() for r in run_episode(config, "single", None, field, timing, seed=9,
                                             settings=ground_truth).records]
            for _ in range(2)
        ]
        assert rows[0] == rows[1]

    def test_record_count_bounds(self, config, timing, ground_truth):
        field = ErrorField.build(6.0, seed=3, release_sd=2.0, release_tumble_prob=0.2)
        report = run_episode(config, "single", None, field, timing, seed=4, settings=ground_truth)
        per_direction = {}
        for record in report.records:
            key = (record.direction, record.block_id)
            per_direction[key] = per_direction.get(key, 0) + 1
        assert all(count <= 2 for count in per_direction.values())
        assert len(report.records) <= 24
        assert all(r.duration_s > 0 for r in report.records)

    def test_traces_are_recorded(self, config, timing, zero_field, ground_truth):
        report = run_episode(config, "single", None, zero_field, timing, seed=0,
                             settings=ground_truth, record_traces=True)
        assert len(report.traces) == 12
        names = [w["name"] for w in report.traces[0]["waypoints"]]
        assert names[0] == "approach" and "grasp" in names and names[-1] == "close_jaw"

    @pytest.mark.slow
    def test_depth_perception_episode(self, config, timing, zero_field, camera, masks):
        report = run_episode(config, "single", None, zero_field, timing, seed=1,
                             settings=ExecutorConfig(), camera=camera, masks=masks)
        assert not report.pegs_from_scene
        successes = sum(r.result == AttemptResult.SUCCESS for r in report.records)
        assert successes >= 10


class TestCorrectedLater:
    def _runner_with_stuck_block(self, config, timing, nudge_prob):
        runner = EpisodeRunner(config, "single", None, ErrorField.zero(), timing, seed=0,
                               settings=ExecutorConfig(perception="ground_truth", nudge_prob=nudge_prob))
        runner.scene.block(0).status = BlockStatus.held("right")
        outcome = resolve_place(runner.scene, 0, Pose((130.0, 31.0), 0.0), 6, seed=1)
        assert outcome.result == PlaceResult.STUCK
        runner.records.append(AttemptRecord(0, "right", 0, Direction.LEFT_TO_RIGHT,
                                            AttemptResult.PLACE_STUCK, 10.0))
        runner._stuck[0] = 0
        return runner

    def test_nudged_block_marks_original_record(self, config, timing):
        runner = self._runner_with_stuck_block(config, timing, nudge_prob=1.0)
        runner._after_release(config.right_peg_ids)
        assert runner.scene.block(0).status == BlockStatus.on_peg(6)
        assert runner.records[0].corrected_later
        stats = aggregate(runner.records)
        assert stats.success_rate == 0
        assert stats.corrected_success_rate == 1

    def test_without_nudges_record_stays_stuck(self, config, timing):
        runner = self._runner_with_stuck_block(config, timing, nudge_prob=0.0)
        runner._after_release(config.right_peg_ids)
        assert runner.scene.block(0).status == BlockStatus.stuck_on(6)
        assert not runner.records[0].corrected_later

    def test_episode_counts_corrected_attempts(self, config, timing):
        field = ErrorField(release_sd=4.0)
        settings = ExecutorConfig(perception="ground_truth", nudge_prob=1.0)
        records = []
        for seed in range(3):
            records += run_episode(config, "single", None, field, timing, seed=seed,
                                   settings=settings, episode_id=seed).records
        corrected = [r for r in records if r.corrected_later]
        assert corrected
        assert all(r.result == AttemptResult.PLACE_STUCK for r in corrected)
        stats = aggregate(records)
        assert stats.corrected_success_rate == stats.success_rate + Fraction(len(corrected), len(records))


def _audit(report, config, settings):
    limit = config.peg_top + settings.clearance_mm
    grasp_z = config.peg_seat_height + config.block_height - settings.grip_depth_mm
    violations = []
    for trace in report.traces:
        waypoints = [Waypoint.from_dict(w) for w in trace["waypoints"]]
        violations += audit_trace(waypoints, config.peg_top, settings.clearance_mm)
        for w in waypoints:
            if w.jaw == Jaw.OPEN and w.height < limit:
                assert grasp_z - 1e-9 <= w.height <= grasp_z + settings.grasp_window_mm
    return violations


@pytest.mark.slow
def test_zero_error_depth_episodes_are_perfect(config, timing, zero_field, camera, masks):
    settings = ExecutorConfig()
    for seed in range(100):
        report = run_episode(config, "single", None, zero_field, timing, seed=seed,
                             settings=settings, camera=camera, masks=masks, record_traces=True)
        assert len(report.records) == 12, f"semilla {seed}"
        assert all(r.result == AttemptResult.SUCCESS for r in report.records), f"semilla {seed}"
        assert _audit(report, config, settings) == []
