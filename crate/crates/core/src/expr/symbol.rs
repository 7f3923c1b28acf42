use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex, OnceLock};

use super::ExprError;

/// What a symbol stands for. Derivative chains carry their order so that
/// `eta''` and `y1^(5)` are distinct symbols sharing a base name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymbolKind {
    State,
    ConstParam,
    /// `order`-th time derivative of a time-varying parameter.
    TvParam { order: u32 },
    /// `order`-th time derivative of output number `index` (1-based).
    Output { index: u32, order: u32 },
    Auxiliary,
}

#[derive(Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct SymbolData {
    base: String,
    kind: SymbolKind,
}

/// Interned symbol handle. Equality and hashing go through the interned id,
/// ordering through `(base, kind)` so printed output is stable.
#[derive(Clone)]
pub struct Symbol {
    id: u32,
    data: Arc<SymbolData>,
}

fn interner() -> &'static Mutex<HashMap<Arc<SymbolData>, u32>> {
    static TABLE: OnceLock<Mutex<HashMap<Arc<SymbolData>, u32>>> = OnceLock::new();
    TABLE.get_or_init(Default::default)
}

impl Symbol {
    fn intern(base: &str, kind: SymbolKind) -> Symbol {
        let data = SymbolData {
            base: base.to_string(),
            kind,
        };
        let mut table = interner().lock().expect("symbol interner poisoned");
        if let Some((data, id)) = table.get_key_value(&data) {
            return Symbol {
                id: *id,
                data: data.clone(),
            };
        }
        let id = u32::try_from(table.len()).expect("symbol table overflow");
        let data = Arc::new(data);
        table.insert(data.clone(), id);
        Symbol { id, data }
    }

    pub fn state(name: &str) -> Symbol {
        Symbol::intern(name, SymbolKind::State)
    }

    pub fn const_param(name: &str) -> Symbol {
        Symbol::intern(name, SymbolKind::ConstParam)
    }

    pub fn tv_param(name: &str, order: u32) -> Symbol {
        Symbol::intern(name, SymbolKind::TvParam { order })
    }

    pub fn output(name: &str, index: u32, order: u32) -> Symbol {
        Symbol::intern(name, SymbolKind::Output { index, order })
    }

    pub fn auxiliary(name: &str) -> Symbol {
        Symbol::intern(name, SymbolKind::Auxiliary)
    }

    pub fn base(&self) -> &str {
        &self.data.base
    }

    pub fn kind(&self) -> &SymbolKind {
        &self.data.kind
    }

    /// Process-wide interned id.
    pub fn id(&self) -> u32 {
        self.id
    }

    /// Derivative order for chain symbols, zero otherwise.
    pub fn order(&self) -> u32 {
        match self.data.kind {
            SymbolKind::TvParam { order } | SymbolKind::Output { order, .. } => order,
            _ => 0,
        }
    }

    pub fn is_state(&self) -> bool {
        self.data.kind == SymbolKind::State
    }

    pub fn is_output_derivative(&self) -> bool {
        matches!(self.data.kind, SymbolKind::Output { .. })
    }

    /// The next symbol along a derivative chain, or `None` for symbols that
    /// are not chains (states, constants, auxiliaries).
    pub fn next_derivative(&self) -> Option<Symbol> {
        self.with_order(self.order() + 1)
    }

    /// The symbol with the same base at another derivative order.
    pub fn with_order(&self, order: u32) -> Option<Symbol> {
        match self.data.kind {
            SymbolKind::TvParam { .. } => Some(Symbol::tv_param(self.base(), order)),
            SymbolKind::Output { index, .. } => Some(Symbol::output(self.base(), index, order)),
            _ => None,
        }
    }

    /// Printed name: `x`, `x'`, `x''`, `x^(k)` for k >= 3.
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl PartialEq for Symbol {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for Symbol {}

impl Hash for Symbol {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.data.cmp(&other.data)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.order() {
            0 => write!(f, "{}", self.base()),
            1 => write!(f, "{}'", self.base()),
            2 => write!(f, "{}''", self.base()),
            k => write!(f, "{}^({k})", self.base()),
        }
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Declared base names and the kind of symbol each one introduces.
///
/// Derivative symbols are resolved from their base: a `tvparams` name or an
/// output name may be followed by apostrophes; anything else may not.
#[derive(Clone, Debug, Default)]
pub struct SymbolTable {
    entries: HashMap<String, Symbol>,
    /// When set, unknown identifiers resolve to auxiliary symbols instead of
    /// failing.
    lenient: bool,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// A table that accepts any identifier, treating undeclared ones as
    /// auxiliary symbols.
    pub fn lenient() -> Self {
        SymbolTable {
            entries: HashMap::new(),
            lenient: true,
        }
    }

    /// Registers the order-zero symbol; derivative orders are implied.
    pub fn declare(&mut self, symbol: Symbol) -> Result<(), ExprError> {
        let base = symbol.base().to_string();
        if self.entries.contains_key(&base) {
            return Err(ExprError::DuplicateSymbol(base));
        }
        let symbol = symbol.with_order(0).unwrap_or(symbol);
        self.entries.insert(base, symbol);
        Ok(())
    }

    pub fn contains(&self, base: &str) -> bool {
        self.entries.contains_key(base)
    }

    pub fn get(&self, base: &str) -> Option<&Symbol> {
        self.entries.get(base)
    }

    /// Resolves `base` with `order` trailing apostrophes.
    pub fn resolve(&self, base: &str, order: u32) -> Result<Symbol, ExprError> {
        let symbol = match self.entries.get(base) {
            Some(s) => s.clone(),
            None if self.lenient && order == 0 => Symbol::auxiliary(base),
            None => return Err(ExprError::UnknownSymbol(base.to_string())),
        };
        if order == 0 {
            return Ok(symbol);
        }
        symbol
            .with_order(order)
            .ok_or_else(|| ExprError::NotDifferentiable(base.to_string()))
    }
}
