"""
Reading the road: from track geometry to a speed/frame-rate policy
==================================================================

Builds the reference loop, turns it into the text the co-driver reads,
and decodes the offline co-driver's answer into per-section settings.
"""

from maps_sim import codriver as cd
from maps_sim.track import build_reference_track, describe_for_prompt

track = build_reference_track(scale=1.0)
print(f"loop length {track.total_length:.3f} m, closure residual {track.closure_residual()[0]:.1e} m")

# what the co-driver is told about the road
description = describe_for_prompt(track)
print(description)

prompt = cd.encode_prompt(description)
print("\n--- user prompt ---")
print(prompt.user_text)

# the mock backend answers offline and deterministically
answer = cd.MockBackend().complete(prompt)
print("\n--- answer ---")
print(answer)

parsed = cd.parse_response(answer)
print("decoded policy:", parsed.policy.to_dict(), "clamped:", parsed.clamp_events or "nothing")

# out-of-range suggestions are pulled back inside the envelope
wild = cd.parse_response("Speed = 120, FPS = 60")
print("\nwild answer ->", wild.policy.to_dict())
print("clamp log:", wild.clamp_events)
