"""epdkit: embodied image-quality dataset construction and NR-IQA training.

Modules:
    tensor      reverse-mode autodiff core (conv/pool/resize/attention ops)
    distortions 25 distortion kinds at 5 severity levels
    metrics     PSNR/SSIM and SRCC/KRCC/PLCC evaluation statistics
    sim         2D push/pick environment with three reward aggregators
    model       multi-scale attention IQA network and training loop
    checkpoint  binary parameter serialization
    pipeline    dataset generation, splits, eval, reports
    cli         command-line entry point (`epdkit`)
"""

__version__ = "0.1.0"
