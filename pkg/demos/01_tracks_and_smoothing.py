"""
Frame tracks, resampling, and Hamming smoothing
===============================================

Every signal in this library is a FrameTrack: a video id, a frame rate,
and an (n_frames, width) array of values. This walk-through builds one,
drops it to the 5 FPS working rate, and smooths a jittery score track.
"""

import numpy as np

from affectpipe import FrameTrack, SmoothingSpec, hamming_smooth, interpolate_to, resample_track

rng = np.random.default_rng(0)

# a 30 FPS embedding track, two seconds long
video = FrameTrack("clip01", fps=30.0, values=rng.normal(size=(60, 4)), kind="embedding")
print("source:", video.n_frames, "frames at", video.fps, "FPS")

# models downstream work at 5 FPS, so keep every sixth frame
working = resample_track(video, 5.0)
print("resampled:", working.n_frames, "frames at", working.fps, "FPS")
print("frame 1 of the working track == source frame 6:",
      np.array_equal(working.values[1], video.values[6]))

# class scores wobble frame to frame; a 0.5 s Hamming window calms them.
# At 5 FPS that window is 3 frames with weights 0.08 / 1.0 / 0.08.
steps = np.zeros((20, 3))
steps[:10, 0] = 1.0   # class 0 for the first two seconds
steps[10:, 2] = 1.0   # class 2 afterwards
scores = FrameTrack("clip01", 5.0, steps, kind="class_scores")
smooth = hamming_smooth(scores, SmoothingSpec(window_seconds=0.5))
print("\nscores around the transition (frames 8-11):")
for t in range(8, 12):
    print(f"  frame {t}: raw {steps[t].round(2)} -> smooth {smooth.values[t].round(3)}")
print("the argmax path is unchanged:",
      np.array_equal(steps.argmax(axis=1), smooth.values.argmax(axis=1)))

# predictions made at 5 FPS can be laid back onto the original clock;
# linear interpolation passes through every 5 FPS sample exactly
back = interpolate_to(smooth, 30.0, 120)
print("\nback at 30 FPS:", back.n_frames, "frames;",
      "knot frames match:", np.array_equal(back.values[::6], smooth.values))
