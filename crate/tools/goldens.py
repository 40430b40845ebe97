#!/usr/bin/env python3
"""Writes the golden vectors under assets/golden/ using only the byte layout
and conversion rules, independently of the Rust codec.

    python3 tools/goldens.py
"""
import json
import math
import os
import struct

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "assets", "golden")

PUBLISH, SUBSCRIBE, GOAL, FEEDBACK, RESULT, CANCEL = 1, 2, 3, 4, 5, 6


def frame(kind, channel, payload):
    ch = channel.encode("utf-8")
    return struct.pack("<IBH", 1 + 2 + len(ch) + len(payload), kind, len(ch)) + ch + payload


def f64s(*vals):
    return struct.pack("<%dd" % len(vals), *vals)


def joint_state(q, aperture):
    return f64s(*q, aperture)


def pose(xyz, quat_xyzw):
    return f64s(*xyz, *quat_xyzw)


def cloud(points):
    out = struct.pack("<I", len(points))
    for (x, y, z), (r, g, b) in points:
        out += struct.pack("<fffBBB", x, y, z, r, g, b)
    return out


def image(w, h, pixels):
    return struct.pack("<HH", w, h) + bytes(pixels)


def trajectory(points):
    out = struct.pack("<I", len(points))
    for q, t in points:
        out += f64s(*q, t)
    return out


def text(s):
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def action(goal_id, body=b""):
    return struct.pack("<Q", goal_id) + body


def result(goal_id, status, code, body=b""):
    return struct.pack("<QBB", goal_id, status, code) + body


POSE = pose((0.5, -0.25, 0.875), (0.0, 0.0, 0.6, 0.8))
TRAJ = trajectory([((0.0,) * 7, 0.0), ((0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0), 1.425)])

PROTOCOL = [
    ("joint_states_zero", frame(PUBLISH, "joint_states", joint_state((0.0,) * 7, 0.0))),
    ("joint_states", frame(PUBLISH, "joint_states",
                           joint_state((0.1, -0.2, 0.3, -0.4, 0.5, -0.6, 0.7), 0.057))),
    ("pose_payload", POSE),
    ("marker_pose", frame(PUBLISH, "marker_pose", POSE)),
    ("point_cloud_payload", cloud([((0.5, -0.25, 1.0), (255, 0, 16)),
                                   ((0.125, 0.75, -2.0), (1, 2, 3))])),
    ("camera_image", frame(PUBLISH, "camera_image", image(2, 1, [10, 20, 30, 40, 50, 60]))),
    ("subscribe", frame(SUBSCRIBE, "camera_image", b"")),
    ("plan_goal", frame(GOAL, "plan_motion", action(7, POSE + struct.pack("<Q", 42)))),
    ("plan_feedback_pending", frame(FEEDBACK, "plan_motion", action(7, bytes([0, 0])))),
    ("plan_result_success", frame(RESULT, "plan_motion", result(7, 2, 0, bytes([1, 0]) + TRAJ))),
    ("plan_result_no_path", frame(RESULT, "plan_motion", result(7, 3, 4, bytes([2, 4])))),
    ("execute_goal", frame(GOAL, "execute_trajectory", action(8))),
    ("execute_feedback", frame(FEEDBACK, "execute_trajectory", action(8, f64s(0.5, 1.425)))),
    ("execute_cancel", frame(CANCEL, "execute_trajectory", action(8))),
    ("execute_result_canceled", frame(RESULT, "execute_trajectory", result(8, 4, 6))),
    ("gripper_goal_close", frame(GOAL, "gripper", action(9, bytes([1])))),
    ("gripper_result_busy", frame(RESULT, "gripper", result(9, 3, 1))),
    ("plan_status_text", frame(PUBLISH, "plan_status_text", text("plan: success"))),
    ("cloud_boxes", frame(PUBLISH, "cloud_boxes",
                          struct.pack("<I", 1) + f64s(0.5, -0.25, 0.55, 0.625, 0.125, 0.75))),
]

# Axis conventions: FLU is forward-left-up, RUF is right-up-forward.
FLU_TO_RUF = [[0, -1, 0], [0, 0, 1], [1, 0, 0]]


def matvec(m, v):
    return [sum(m[i][k] * v[k] for k in range(3)) for i in range(3)]


def matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(3)) for j in range(3)] for i in range(3)]


def transpose(m):
    return [[m[j][i] for j in range(3)] for i in range(3)]


def quat_to_matrix(x, y, z, w):
    return [
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ]


def matrix_to_quat(m):
    tr = m[0][0] + m[1][1] + m[2][2]
    if tr > 0:
        s = 2 * math.sqrt(1 + tr)
        q = [(m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s, s / 4]
    elif m[0][0] > m[1][1] and m[0][0] > m[2][2]:
        s = 2 * math.sqrt(1 + m[0][0] - m[1][1] - m[2][2])
        q = [s / 4, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s, (m[2][1] - m[1][2]) / s]
    elif m[1][1] > m[2][2]:
        s = 2 * math.sqrt(1 + m[1][1] - m[0][0] - m[2][2])
        q = [(m[0][1] + m[1][0]) / s, s / 4, (m[1][2] + m[2][1]) / s, (m[0][2] - m[2][0]) / s]
    else:
        s = 2 * math.sqrt(1 + m[2][2] - m[0][0] - m[1][1])
        q = [(m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, s / 4, (m[1][0] - m[0][1]) / s]
    if q[3] < 0:
        q = [-c for c in q]
    return q


def axis_angle(axis, angle):
    n = math.sqrt(sum(c * c for c in axis))
    s = math.sin(angle / 2)
    return [axis[0] / n * s, axis[1] / n * s, axis[2] / n * s, math.cos(angle / 2)]


def flu_to_ruf_quat(q):
    m = FLU_TO_RUF
    return matrix_to_quat(matmul(matmul(m, quat_to_matrix(*q)), transpose(m)))


def ruf_cases():
    points = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.3, -1.2, 2.5],
              [0.6, 0.0, 0.8], [0.63, 0.15, 0.5885]]
    rotations = [
        axis_angle((0, 0, 1), math.pi / 2),
        axis_angle((1, 0, 0), 0.3),
        axis_angle((0, 1, 0), math.pi / 2),
        axis_angle((1, -2, 0.5), 1.1),
        axis_angle((0.2, 0.4, -1), 2.9),
        [0.0, 0.0, 0.0, 1.0],
    ]
    return {
        "points": [{"flu": p, "ruf": matvec(FLU_TO_RUF, p)} for p in points],
        "rotations": [{"flu": q, "ruf": flu_to_ruf_quat(q)} for q in rotations],
        "gizmo": [{"ruf": [0.0, 0.8, 0.6], "flu": [0.6, 0.0, 0.8]}],
    }


def interpolator_cases():
    traj = [
        ([0.0, -0.5, 0.0, 1.0, 0.0, 0.5, 0.0], 0.0),
        ([0.4, -0.3, 0.1, 1.2, -0.2, 0.6, 0.3], 0.8),
        ([0.4, -0.3, 0.1, 1.2, -0.2, 0.6, 0.3], 1.1),
        ([-0.2, 0.1, 0.5, 0.7, 0.3, 0.2, -0.4], 2.35),
    ]
    times = [-0.5, 0.0, 0.1, 0.4, 0.8, 0.95, 1.1, 1.5, 2.0, 2.35, 3.0]
    samples = []
    for t in times:
        if t <= traj[0][1]:
            q = traj[0][0]
        elif t >= traj[-1][1]:
            q = traj[-1][0]
        else:
            i = next(k for k in range(1, len(traj)) if traj[k][1] > t)
            (qa, ta), (qb, tb) = traj[i - 1], traj[i]
            s = (t - ta) / (tb - ta)
            q = [a + (b - a) * s for a, b in zip(qa, qb)]
        samples.append({"t": t, "q": list(q)})
    return {
        "trajectory": [{"q": q, "time_from_start": t} for q, t in traj],
        "samples": samples,
    }


def main():
    os.makedirs(ROOT, exist_ok=True)
    with open(os.path.join(ROOT, "protocol.txt"), "w") as f:
        for name, b in PROTOCOL:
            f.write("%s %s\n" % (name, b.hex()))
    with open(os.path.join(ROOT, "ruf.json"), "w") as f:
        json.dump(ruf_cases(), f, indent=1)
        f.write("\n")
    with open(os.path.join(ROOT, "interpolator.json"), "w") as f:
        json.dump(interpolator_cases(), f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
