"""lobclone: a limit-order-book market simulator with a behavioral-cloning
pipeline that trains a small LSTM on book snapshots paired with trade
prices and deploys the clone as a live trading agent ("DTR") alongside
seven baseline strategies.
"""

from .exchange import (LimitOrderBook, Level2View, Order, Side, TapeEvent,
                       ValidationError, export_tape_csv)
from .traders import (CustomerOrder, MarketEvent, MarketView, StrategyParams,
                      STRATEGY_TAGS, Trader, make_trader)
from .session import (ConfigError, ReplenishMode, ScheduleShape, ScheduleSpec,
                      SessionConfig, SessionResult, allocative_efficiency,
                      build_schedule, run_session, smith_alpha,
                      smith_alpha_series, theoretical_equilibrium)
from .features import (CORE_SIX, FEATURE_NAMES, DegenerateFeatureError,
                       MarketSnapshot, NormalizationSpec, SnapshotDataset,
                       SnapshotRecorder, TradePriceTracker, imbalance,
                       live_features, microprice, p_star_estimate)
from .network import (AdamState, ModelBundle, TrainConfig, TrainResult,
                      TrainingDiverged, adam_step, backward, forward,
                      init_params, load_model, mse_loss, predict, save_model,
                      train)
from .clone_agent import CloneTrader
from .experiments import (DEFAULT_POOL, PROPORTION_GROUPS, TrialSet,
                          ablate_feature, ablation_sweep, ci90, ci_overlap,
                          enumerate_grid, fixed_corpus_configs, generate_corpus,
                          grid_corpus_configs, plan_sessions,
                          proportion_assignments, reduce_and_retrain, run_bgt,
                          run_omt, scale_plan, summary_stats, train_on_dataset)

__version__ = "0.1.0"
