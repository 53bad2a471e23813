"""Interactive imitation learning with consensus actions instead of expert-agent switching.

Subpackages:
    consensus   -- weighted L_p central tendency of action candidates
    noise       -- autoregressive red noise for time-consistent exploration
    policy      -- K-head Gaussian ensemble policy with uncertainty control
    envs        -- toy 2D tasks with scripted experts
    loop        -- interaction loop, conditions, experiment harness
    cli         -- command-line front end (run / eval / teleop)
"""

__version__ = "0.1.0"
