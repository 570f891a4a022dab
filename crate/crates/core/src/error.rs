use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row error at line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("value error at line {line}, column `{column}`: {message}")]
    Value { line: usize, column: String, message: String },
    #[error("size error: {0}")]
    Size(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseErrorKind {
    #[error("unbalanced parenthesis")]
    UnbalancedParen,
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("operator `{0}` is missing an operand")]
    DanglingOperator(char),
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("unexpected token `{0}`")]
    UnexpectedToken(String),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("malformed number `{0}`")]
    BadNumber(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("fractional power {exponent} of negative base {base}")]
    NegativeFractionalPower { base: f64, exponent: f64 },
    #[error("non-finite result")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown builtin function `{0}`")]
    UnknownBuiltin(String),
    #[error("malformed equation `{0}`: expected `<column> = <expression>`")]
    BadEquation(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnowledgeError {
    #[error("knowledge spec error: {0}")]
    Spec(String),
    #[error("cannot infer statistical knowledge: {0}")]
    Inference(String),
    #[error("knowledge file {path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("replay miss for prompt hash {hash}")]
    ReplayMiss { hash: String },
    #[error("replay store error: {0}")]
    Store(String),
    #[error("stub oracle error: {0}")]
    Stub(String),
    #[error("backend config error: {0}")]
    Config(String),
}

impl BackendError {
    /// Transport failures, 5xx and 429 are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("plan error: {0}")]
    Plan(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("chunk {chunk} failed after {attempts} attempt(s): {source}")]
    Backend {
        chunk: usize,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("size error: {0}")]
    Size(String),
    #[error("region is empty: no rows with {column} in [{lo}, {hi}]")]
    RegionEmpty { column: String, lo: f64, hi: f64 },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("MAPE undefined: {0}")]
    MapeUndefined(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("row {row}: {source}")]
    Eval {
        row: usize,
        #[source]
        source: EvalError,
    },
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("sweep failed: {failed} of {total} cells failed")]
    SweepFailed { failed: usize, total: usize },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("i/o error: {0}")]
    Io(String),
}
