"""Desk-scale controllable scar synthesis for cardiac LGE phantom images.

Subpackages / modules:
    phantom     - deterministic short-axis LGE phantom generator
    anatomy     - AHA-17 parcellation, radial layers, transmurality, n-SD GT
    scarscript  - parametric scar placement and anatomical captions
    condition   - preprocessing and generator conditioning bundles
    genmodel    - latent diffusion generator with reward-guided control branch
    rewardseg   - scar/myocardium segmenter (reward model, QC oracle, downstream)
    evalqc      - metrics, QC filter, patient-level detection, reports
    pipeline    - staged experiment orchestration and run ledger
"""

__version__ = "0.1.0"
