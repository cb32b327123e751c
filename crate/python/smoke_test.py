"""Smoke test for the pyrelscore extension module.

Build with `cargo build -p relscore-py --release`, then copy
target/release/libpyrelscore.so to pyrelscore.so somewhere on PYTHONPATH.
"""

import math

import pyrelscore as rs


def main():
    a = rs.BoundingBox(0, 0, 10, 10)
    b = rs.BoundingBox(5, 0, 15, 10)
    assert a.area() == 100
    assert a.iou_exact(b) == (1, 3)
    assert math.isclose(rs.iou([0, 0, 10, 10], [5, 0, 15, 10]), 1 / 3)
    assert rs.BoundingBox.sentinel().is_sentinel
    assert a == rs.BoundingBox(0, 0, 10, 10)
    try:
        rs.BoundingBox(10, 0, 0, 10)
    except ValueError:
        pass
    else:
        raise AssertionError("inverted box accepted")

    caption = (
        "<ref>person</ref><box>[0,0,10,10]</box> "
        "<pred>sitting on</pred><box>[0,0,10,10]</box><box>[0,10,10,20]</box> "
        "<ref>bench</ref><box>[0,10,10,20]</box>"
    )
    parsed = rs.parse_caption(caption)
    assert not parsed["diagnostics"], parsed["diagnostics"]
    assert len(parsed["triplets"]) == 1
    assert parsed["triplets"][0]["predicate"] == "sitting on"

    env = rs.parse_envelope("<think>x</think><answer>y</answer>")
    assert env["well_formed"]

    gt = {"image_id": "img", "task": "binary", "caption": caption}
    r = rs.total_reward(f"<think>ok</think><answer>{caption}</answer>", gt)
    assert r["total"] == 2.0, r

    report = rs.evaluate([{"image_id": "img", "output_text": caption}], [gt])
    assert report["report"]["sgg"]["recall"] == 100.0, report

    adv = rs.advantages([1.0, 0.0, 1.0, 0.0])
    assert math.isclose(sum(adv), 0.0, abs_tol=1e-12)
    assert rs.kl_estimator(0.0) == 0.0

    group = {
        "prompt_id": "p",
        "responses": [
            {"text": "a", "reward": 1.0, "logp_new": [-1.0], "logp_old": [-1.0], "logp_ref": [-1.0]},
            {"text": "b", "reward": 0.0, "logp_new": [-2.0], "logp_old": [-2.0], "logp_ref": [-2.0]},
        ],
    }
    obj = rs.grpo_objective(group)
    assert math.isclose(obj["objective"], 0.0, abs_tol=1e-12), obj
    grad = rs.grpo_objective_grad(group)
    assert len(grad) == 2

    assert "<think>" in rs.render_prompt("sgg-caption-cot", "some scene")

    world = rs.toy_world(7, "nary")
    assert world["task"] == "nary"

    trace = rs.train_sim(task="binary", seed=1, steps=20, group_size=4)
    assert len(trace) == 20
    print("smoke test passed")


if __name__ == "__main__":
    main()
