"""Regenerate the shipped scene and robot-path JSON files under src/dynmap/scenes/."""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "dynmap" / "scenes"


def rect(x0, y0, x1, y1):
    return [[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]


def agent(pattern, waypoints, speed, noise=0.08, dwell=0.0, offset=0.0, dwell_at=None):
    a = {"pattern": pattern, "waypoints": [list(map(float, p)) for p in waypoints],
         "speed": speed, "heading_noise_sigma": noise, "dwell_time": dwell,
         "start_offset": offset}
    if dwell_at is not None:
        a["dwell_at"] = dwell_at
    return a


def rotate(points, k):
    k %= len(points)
    return points[k:] + points[:k]


def corridor_loop():
    # 2 m wide ring corridor around a 12 x 4 m block; everyone circulates counter-clockwise
    walls = rect(0, 0, 16, 8) + rect(2, 2, 14, 6)
    lanes = [
        [(1.0, 1.0), (15.0, 1.0), (15.0, 7.0), (1.0, 7.0)],
        [(1.5, 1.5), (14.5, 1.5), (14.5, 6.5), (1.5, 6.5)],
        [(0.6, 0.6), (15.4, 0.6), (15.4, 7.4), (0.6, 7.4)],
    ]
    agents = []
    for k in range(10):
        lane = lanes[k % 3]
        agents.append(agent("waypoint_loop", rotate(lane, k % 4), 1.0 + 0.05 * (k % 5),
                            offset=float(4 * (k // 4))))
    scene = {"version": 1, "name": "corridor_loop", "seed": 11, "bounds": [0, 0, 16, 8],
             "walls": walls, "agents": agents}
    robot = {"version": 1, "waypoints": [[1, 1], [1, 7], [15, 7], [15, 1]], "speed": 0.6,
             "loop": True, "duration": 1200.0, "turn_time": 1.0}
    return scene, robot


def junction():
    # plus-shaped crossing of two 4 m corridors
    walls = rect(0, 0, 14, 14) + [
        [0, 5, 5, 5], [5, 0, 5, 5], [9, 5, 14, 5], [9, 0, 9, 5],
        [0, 9, 5, 9], [5, 9, 5, 14], [9, 9, 14, 9], [9, 9, 9, 14],
    ]
    agents = [
        agent("l_path", [(0.5, 6.2), (13.5, 6.2)], 1.2, noise=0.1),
        agent("l_path", [(13.5, 7.8), (0.5, 7.8)], 1.1, noise=0.1, offset=2.0),
        agent("l_path", [(6.2, 13.5), (6.2, 0.5)], 1.0, noise=0.1),
        agent("l_path", [(7.8, 0.5), (7.8, 13.5)], 1.3, noise=0.1, offset=3.0),
        agent("l_path", [(0.5, 7.0), (7.0, 7.0), (7.0, 0.5)], 1.1, noise=0.1, offset=1.0),
        agent("l_path", [(13.5, 7.0), (7.0, 7.0), (7.0, 13.5)], 1.2, noise=0.1, offset=4.0),
        agent("waypoint_loop", [(5.5, 5.5), (8.5, 5.5), (8.5, 8.5), (5.5, 8.5)], 0.9, noise=0.1),
        agent("l_path", [(0.5, 6.8), (13.5, 6.8)], 1.0, noise=0.1, offset=6.0),
        agent("l_path", [(7.2, 13.5), (7.2, 0.5)], 1.1, noise=0.1, offset=5.0),
        agent("l_path", [(6.6, 0.5), (6.6, 7.4), (13.5, 7.4)], 1.0, noise=0.1, offset=2.5),
        agent("l_path", [(0.5, 7.4), (6.6, 7.4), (6.6, 13.5)], 1.2, noise=0.1, offset=7.0),
        agent("l_path", [(13.5, 6.0), (0.5, 6.0)], 1.3, noise=0.1, offset=8.0),
    ]
    scene = {"version": 1, "name": "junction", "seed": 23, "bounds": [0, 0, 14, 14],
             "walls": walls, "agents": agents}
    robot = {"version": 1, "waypoints": [[1, 7], [13, 7], [7, 7], [7, 13], [7, 1], [7, 7]],
             "speed": 0.5, "loop": True, "duration": 1200.0, "turn_time": 1.0}
    return scene, robot


def l_path_office():
    # corridor (y < 3) below a room (y > 3); doors at x in [2, 3.2] and [10, 11.2]
    walls = rect(0, 0, 14, 10) + [[0, 3, 2, 3], [3.2, 3, 10, 3], [11.2, 3, 14, 3]]
    agents = [
        agent("l_path", [(2.6, 8.5), (2.6, 1.5), (13.0, 1.5)], 1.0),
        agent("l_path", [(2.6, 8.5), (2.6, 1.5), (13.0, 1.5)], 1.2, offset=6.0),
        agent("waypoint_loop", [(1.0, 0.7), (13.0, 0.7), (13.0, 2.3), (1.0, 2.3)], 1.1),
        agent("waypoint_loop", rotate([(1.0, 0.7), (13.0, 0.7), (13.0, 2.3), (1.0, 2.3)], 2), 1.0),
        agent("waypoint_loop", [(2.6, 1.2), (10.6, 1.2), (10.6, 6.0), (2.6, 6.0)], 1.0),
        agent("waypoint_loop", rotate([(2.6, 1.2), (10.6, 1.2), (10.6, 6.0), (2.6, 6.0)], 2), 1.2),
    ]
    scene = {"version": 1, "name": "l_path_office", "seed": 5, "bounds": [0, 0, 14, 10],
             "walls": walls, "agents": agents}
    robot = {"version": 1, "waypoints": [[4, 5], [12, 5], [12, 8.5], [4, 8.5]], "speed": 0.5,
             "loop": True, "duration": 1200.0, "turn_time": 1.0}
    return scene, robot


def queue():
    # agents visit a reception desk, wait there, then leave along the bottom
    walls = rect(0, 0, 12, 8) + [[4.5, 6.0, 7.5, 6.0]]
    route = [(1.0, 1.0), (6.0, 5.4), (11.0, 1.0), (6.0, 0.8)]
    agents = [agent("queue_then_go", route, 1.0 + 0.05 * k, noise=0.1, dwell=3.0,
                    offset=float(3 * k), dwell_at=[1]) for k in range(8)]
    scene = {"version": 1, "name": "queue", "seed": 31, "bounds": [0, 0, 12, 8],
             "walls": walls, "agents": agents}
    robot = {"version": 1, "waypoints": [[2, 4], [10, 4]], "speed": 0.4, "loop": True,
             "duration": 1200.0, "turn_time": 1.0}
    return scene, robot


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for make in (corridor_loop, junction, l_path_office, queue):
        scene, robot = make()
        name = scene["name"]
        (OUT / f"{name}.scene.json").write_text(json.dumps(scene, indent=2) + "\n")
        (OUT / f"{name}.robot.json").write_text(json.dumps(robot, indent=2) + "\n")
        print("wrote", name)


if __name__ == "__main__":
    main()
