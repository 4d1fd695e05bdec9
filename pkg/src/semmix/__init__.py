"""semmix: desk-scale acoustic-highlighting toolkit.

Modules follow the pipeline: dsp_core (signal kernels and WAV I/O),
mix_synthesis (poor-mix construction and the loudness-sampling remix
baseline), metrics (five-metric evaluation suite), prompt_kit (aspect
prompt templates and caption validation), highlight_model (toy
text-conditioned remix network with hand-written gradients), manifest
(dataset manifests), toydata (synthetic corpora), and cli (batch entry
points).
"""

from .dsp_core import (
    AudioClip,
    LoudnessTrajectory,
    Spectrogram,
    StftConfig,
    analytic_envelope,
    istft,
    loudness_trajectory,
    mel_band_energies,
    read_wav,
    stft,
    write_wav,
)
from .highlight_model import (
    HighlightModel,
    ModelConfig,
    TrainConfig,
    TrainSample,
    build_model,
    depth_sweep,
    forward_remix,
    grad_check,
    load_checkpoint,
    oracle_mask,
    save_checkpoint,
    train_toy,
)
from .manifest import Manifest, ManifestEntry, load_manifest, save_manifest
from .metrics import (
    EmbeddingVector,
    EventDistribution,
    EvalProviders,
    MetricsReport,
    StemTrajectories,
    delta_ib,
    env,
    evaluate_clip,
    kld,
    mag,
    w_dis,
)
from .mix_synthesis import (
    GainCurve,
    GainSchedule,
    LoudnessPrior,
    StemSet,
    apply_gain_schedule,
    cdx_baseline_remix,
    synthesize_poor_mix,
)
from .prompt_kit import (
    AspectId,
    Caption,
    PromptFamily,
    prompt_stats,
    render_prompt,
    validate_caption,
)

__version__ = "0.1.0"
