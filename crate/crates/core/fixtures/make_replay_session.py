"""Regenerate replay_session.csv and replay_expected_front.dat.

Models a stub-kernel sweep on a virtual clock with cores=3, static power
100 W and 15 minimum repetitions: each configuration runs 16 timed
repetitions followed by 16 energy repetitions, each lasting 1/(g*t) s.
Power holds a per-configuration level during the energy repetitions and
ramps between levels in the middle of the timing repetitions.
"""

STATIC_W = 100.0
REPS = 16
LEVELS = {(1, 1): 120.0, (1, 2): 200.0, (1, 3): 260.0, (2, 1): 150.0, (3, 1): 190.0}


def configs(cores):
    return [(g, t) for g in range(1, cores + 1) for t in range(1, cores // g + 1)]


def main():
    samples = [(0.0, LEVELS[(1, 1)])]
    points = []
    now = 0.0
    for g, t in configs(3):
        run = 1.0 / (g * t)
        time_loop = REPS * run
        level = LEVELS[(g, t)]
        samples.append((now + time_loop / 3, samples[-1][1]))
        samples.append((now + 2 * time_loop / 3, level))
        now += time_loop + REPS * run
        samples.append((now, level))
        points.append(((g, t), run, (level - STATIC_W) * run))
    samples.append((now + 5.0, LEVELS[(3, 1)]))

    with open("replay_session.csv", "w") as f:
        f.write("timestamp_s,power_w\n")
        for ts, p in samples:
            f.write(f"{ts!r},{p!r}\n")

    front = [
        p for p in points
        if not any(q[1] <= p[1] and q[2] <= p[2] and (q[1] < p[1] or q[2] < p[2]) for q in points)
    ]
    front.sort(key=lambda p: p[1])
    with open("replay_expected_front.dat", "w") as f:
        for cfg, time_s, energy in front:
            f.write(f"{time_s!r} {energy!r} {cfg[0]},{cfg[1]}\n")


if __name__ == "__main__":
    main()
