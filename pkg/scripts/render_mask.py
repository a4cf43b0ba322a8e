"""Render a segmentation mask of balloons in front of the camera and write it as PGM.

Balloon centres are given in the camera frame (x right, y down, z forward):

    python scripts/render_mask.py mask.pgm 0,0,20 -3,0.5,15
"""
import sys

import numpy as np

from balloonpop import perception as pc
from balloonpop import simulator as sim
from balloonpop.geometry import CameraIntrinsics, CameraPose
from balloonpop.mission import ArenaConfig


def main(argv):
    if len(argv) < 2:
        print(__doc__, file=sys.stderr)
        return 2
    centers = [np.array([float(x) for x in a.split(",")]) for a in argv[1:]]
    world = sim.SimWorld(ArenaConfig(), [sim.Balloon(i, c) for i, c in enumerate(centers)])
    intr = CameraIntrinsics(600.0, 600.0, 239.5, 134.5, 480, 270)
    mask = sim.render_mask(world, CameraPose(), intr, sim.SensorNoiseConfig())
    pc.write_pgm(argv[0], mask)
    for d in pc.detect(mask, intr, pc.DetectorConfig()):
        print(f"center {d.fit.center.round(2)}  radius {d.fit.R_mean:.2f} px  position {d.P_m.round(3)}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
