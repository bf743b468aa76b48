"""semsample: agent-driven semantic sampling of traffic-scene layouts over a
fading wireless link.

Scenes are encoded as compact bit-packed layout packets, a soft actor-critic
agent decides per sensing interval whether to transmit, and the destination
bridges silent intervals with constant-velocity layout prediction.  The
package covers the domain types and codec, the composite-fading energy model,
scene ingestion, the destination predictor, the learning agent, the episode
simulator and a command-line front end.
"""

__version__ = "0.1.0"
