"""Quality-diversity illumination of a scene generator's latent space."""

from .tiles import (
    CANONICAL_ALPHABET,
    TileAlphabet,
    TileGrid,
    crop_output,
    load_alphabet,
    one_hot_encode,
    parse_scene,
    render_scene,
)
from .generator import (
    GeneratorSpec,
    LayerSpec,
    decode,
    forward,
    load_generator,
    save_generator,
    synthetic_decode,
)
from .sim import (
    EVENT_ORDER,
    NoSpawnSurface,
    PlaythroughTrace,
    SimState,
    astar_play,
    classify_events,
    initial_state,
    step,
)
from .metrics import (
    BCConfig,
    Evaluation,
    enemy_count,
    evaluate,
    kl_divergence,
    pattern_distribution,
    sky_tile_count,
)
from .archive import (
    Archive,
    Elite,
    MapConfig,
    bc_to_cell,
    coverage,
    export_csv,
    load_csv,
    make_elite,
    preset,
    qd_score,
    random_elite,
    try_insert,
    valid_stats,
)
from .search import (
    ALGORITHMS,
    AlgorithmConfig,
    EmitterState,
    MetricsRow,
    cma_ask,
    cma_tell,
    improvement_rank,
    iso_line_dd,
    me_variation,
    preset_config,
    random_sample,
    run,
)
from .harness import (
    CellNotFound,
    ExperimentConfig,
    SummaryReport,
    export_heatmap,
    extract_scenes,
    load_experiment_config,
    run_experiment,
)

__version__ = "0.1.0"
