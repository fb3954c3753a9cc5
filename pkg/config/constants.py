# ── Modality dimensions ───────────────────────────────────────────────────────
MODALITIES = ("location", "category", "content", "url", "security")
LOCATION_DIM = 32               # IPv4 bits, most significant first
CATEGORY_COUNT = 20
CATEGORY_DIM = 256              # lookup embedding width
CONTENT_DIM = 768               # precomputed multilingual text vectors
URL_DIM = 256                   # recurrent encoder hidden size
URL_CHAR_DIM = 32               # per-character embedding width
URL_MAX_LEN = 256               # longer URLs are truncated
SECURITY_DIM = 6
SECURITY_FIELDS = ("software_count", "avg_cves", "avg_cvss", "max_cvss", "https_ok", "cert_errors")

# ── URL vocabulary: padding, 95 printable ASCII characters, unknown ──────────
URL_PAD_INDEX = 0
URL_FIRST_PRINTABLE = 32        # ' '
URL_LAST_PRINTABLE = 126        # '~'
URL_UNK_INDEX = URL_LAST_PRINTABLE - URL_FIRST_PRINTABLE + 2
URL_VOCAB_SIZE = URL_UNK_INDEX + 1

# ── GNN ───────────────────────────────────────────────────────────────────────
HIDDEN_DIM = 256
NUM_LAYERS = 2
LEAKY_SLOPE = 0.2

# ── Numeric guards ────────────────────────────────────────────────────────────
NORM_EPS = 1e-12                # l2_normalize passes vectors at or below this norm through
BCE_EPS = 1e-12                 # probabilities are clamped to [eps, 1 - eps]
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# ── Optimiser / schedule ──────────────────────────────────────────────────────
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MAX_LR = 5e-3                   # desk-scale; 1e-3 at full scale
WARMUP_FRACTION = 0.1
FINAL_LR_DIVISOR = 1000.0       # cosine anneal ends at max_lr / 1000

# ── Labelling ─────────────────────────────────────────────────────────────────
TAU_GT = 0.5                    # reuse_rate strictly above this is a positive edge
MIN_SHARED = 30                 # pairs with fewer shared users carry no label
TAU_PRED = 0.5                  # predicted probability at or above this is positive
THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))

# ── Training ──────────────────────────────────────────────────────────────────
ROUNDS = 200
PATIENCE = 40
BATCH_SIZE = 32                 # desk-scale; 2**16 at full scale
NUM_CLIENTS = 10

# ── Communication cost accounting ─────────────────────────────────────────────
BYTES_PER_SCALAR = 8
EMBEDDING_DIRECTIONS = 2        # 1 = one-way, 2 = bidirectional embedding exchange

# ── Ranking / risk reports ────────────────────────────────────────────────────
RANKING_KS = (1, 2, 4, 8, 16, 32, 64)
RANKING_CANDIDATES = 64         # evaluated edges sampled per website node

# ── Synthetic corpus defaults ─────────────────────────────────────────────────
SYNTH_SITES = 1000
SYNTH_PAIR_PROBABILITY = 0.06
SYNTH_CATEGORY_AFFINITY = 0.85
SYNTH_SECURITY_GAP_PENALTY = 0.08
SYNTH_BASE_REUSE = 0.05
SYNTH_NOISE = 0.05
SYNTH_USERS_PER_PAIR_RANGE = (20, 240)
SYNTH_SECURITY_TIERS = 4
SYNTH_URL_FAMILIES_PER_CATEGORY = 3
SYNTH_SAME_CATEGORY_PAIR_BOOST = 8.0  # same-category sites share users more often
SYNTH_CONTENT_SPREAD = 0.5       # within-category std of content vectors

# ── File formats ──────────────────────────────────────────────────────────────
CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_DTYPE = "<f8"
GRAPH_FILE = "graph.jsonl"
SNAPSHOT_FILE = "snapshot.jsonl"
PARTITION_FILE = "partition.jsonl"
SPLIT_FILE = "split.json"
CHECKPOINT_FILE = "model.ckpt"
TRAIN_LOG_FILE = "train_log.jsonl"
REPORT_DIR = "report"

# ── Process exit codes ────────────────────────────────────────────────────────
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_RUNTIME_FAILURE = 4
