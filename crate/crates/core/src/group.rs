//! Finitely generated group models with exact normal forms.
//!
//! A `GroupSpec` fixes a generating set and one of four kinds:
//! free, free abelian, free product of cyclics, or an explicit shortlex
//! rewriting table. The first three have closed-form normal forms and exact
//! word metrics; the table kind trusts a user-supplied confluent, geodesic
//! rewriting system and validates geodesy during ball enumeration.
//!
//! Peripheral subgroups are generator subsets. Left cosets get canonical
//! representatives (the lexicographically least element of minimal word
//! length), which makes coset identity a plain equality test.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// One letter of a word: generator index plus an inverse bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sym(pub u16);

impl Sym {
    pub fn gen(idx: usize, inverse: bool) -> Sym {
        Sym(((idx as u16) << 1) | inverse as u16)
    }

    pub fn gen_index(self) -> usize {
        (self.0 >> 1) as usize
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    pub fn inverse(self) -> Sym {
        Sym(self.0 ^ 1)
    }
}

/// Group element in normal form. Ordered by word length, then
/// lexicographically on the normal-form word.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Element {
    word: Vec<Sym>,
}

impl Element {
    pub fn identity() -> Element {
        Element { word: Vec::new() }
    }

    pub fn word(&self) -> &[Sym] {
        &self.word
    }

    /// Word length in the group's generating set. Normal forms are geodesic
    /// for every kind (validated for the table kind), so this is the length
    /// of the normal-form word.
    pub fn word_len(&self) -> u32 {
        self.word.len() as u32
    }

    pub fn is_identity(&self) -> bool {
        self.word.is_empty()
    }
}

impl PartialOrd for Element {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Element {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.word
            .len()
            .cmp(&other.word.len())
            .then_with(|| self.word.cmp(&other.word))
    }
}

/// What the generators satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupKind {
    Free,
    FreeAbelian,
    /// One cyclic factor per generator; order 0 means an infinite factor.
    FreeProductOfCyclics { orders: Vec<u32> },
    /// Shortlex-reducing rewriting rules over the generators, applied
    /// together with free reduction until a fixpoint. Confluence and
    /// geodesy of normal forms are the table author's responsibility;
    /// geodesy is checked during ball enumeration.
    Table { rules: Vec<RewriteRule> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub lhs: Vec<Sym>,
    pub rhs: Vec<Sym>,
}

/// A peripheral subgroup: the subgroup generated by a subset of generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Peripheral {
    /// Ascending generator indices.
    pub gens: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown symbol `{token}` at word position {pos}")]
    UnknownSymbol { token: String, pos: usize },
    #[error("ball of radius {radius} exceeds the vertex budget {budget} (at least {seen} elements)")]
    BudgetExceeded { radius: u32, budget: usize, seen: usize },
    #[error("rewriting table is not geodesic: element `{word}` has normal form length {nf_len} but distance {depth} from the identity")]
    TableNotGeodesic { word: String, nf_len: u32, depth: u32 },
    #[error("rewriting rule {index} does not shrink in shortlex order")]
    RuleNotReducing { index: usize },
    #[error("peripheral index {0} is out of range ({1} peripherals)")]
    PeripheralOutOfRange(usize, usize),
    #[error("generator index {0} is out of range ({1} generators)")]
    GeneratorOutOfRange(usize, usize),
    #[error("element `{0}` is not in the peripheral subgroup {1}")]
    NotPeripheral(String, usize),
}

/// A concrete group presentation: kind, named generators, peripherals.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub kind: GroupKind,
    pub gen_names: Vec<String>,
    pub peripherals: Vec<Peripheral>,
}

impl GroupSpec {
    pub fn free(names: &[&str]) -> GroupSpec {
        GroupSpec {
            kind: GroupKind::Free,
            gen_names: names.iter().map(|s| s.to_string()).collect(),
            peripherals: Vec::new(),
        }
    }

    pub fn free_abelian(names: &[&str]) -> GroupSpec {
        GroupSpec {
            kind: GroupKind::FreeAbelian,
            gen_names: names.iter().map(|s| s.to_string()).collect(),
            peripherals: Vec::new(),
        }
    }

    pub fn free_product_of_cyclics(names: &[&str], orders: &[u32]) -> GroupSpec {
        assert_eq!(names.len(), orders.len());
        GroupSpec {
            kind: GroupKind::FreeProductOfCyclics {
                orders: orders.to_vec(),
            },
            gen_names: names.iter().map(|s| s.to_string()).collect(),
            peripherals: Vec::new(),
        }
    }

    pub fn with_peripheral(mut self, gens: &[usize]) -> GroupSpec {
        let mut gens = gens.to_vec();
        gens.sort_unstable();
        gens.dedup();
        self.peripherals.push(Peripheral { gens });
        self
    }

    pub fn generator_count(&self) -> usize {
        self.gen_names.len()
    }

    /// The symbols that generate the Cayley graph: every generator and its
    /// inverse, skipping inverse symbols that equal the generator itself
    /// (order-2 cyclic factors).
    pub fn edge_symbols(&self) -> Vec<Sym> {
        let mut out = Vec::new();
        for i in 0..self.gen_names.len() {
            out.push(Sym::gen(i, false));
            let involution = matches!(
                &self.kind,
                GroupKind::FreeProductOfCyclics { orders } if orders[i] == 2
            );
            if !involution {
                out.push(Sym::gen(i, true));
            }
        }
        out
    }

    /// Validates structural constraints; rewriting rules must shrink words in
    /// shortlex order so that reduction terminates.
    pub fn validate(&self) -> Result<(), GroupError> {
        if let GroupKind::Table { rules } = &self.kind {
            for (i, rule) in rules.iter().enumerate() {
                if !shortlex_less(&rule.rhs, &rule.lhs) {
                    return Err(GroupError::RuleNotReducing { index: i });
                }
            }
        }
        if let GroupKind::FreeProductOfCyclics { orders } = &self.kind {
            assert_eq!(orders.len(), self.gen_names.len(), "one order per generator");
        }
        for p in &self.peripherals {
            for &g in &p.gens {
                if g >= self.gen_names.len() {
                    return Err(GroupError::GeneratorOutOfRange(g, self.gen_names.len()));
                }
            }
        }
        Ok(())
    }

    /// Reduces an arbitrary word to its normal form.
    pub fn reduce_word(&self, word: &[Sym]) -> Element {
        match &self.kind {
            GroupKind::Free => Element {
                word: reduce_syllables(word, |_| 0),
            },
            GroupKind::FreeProductOfCyclics { orders } => Element {
                word: reduce_syllables(word, |g| orders[g]),
            },
            GroupKind::FreeAbelian => {
                let mut exps = vec![0i64; self.gen_names.len()];
                for s in word {
                    exps[s.gen_index()] += if s.is_inverse() { -1 } else { 1 };
                }
                let mut out = Vec::new();
                for (g, &e) in exps.iter().enumerate() {
                    let sym = Sym::gen(g, e < 0);
                    for _ in 0..e.unsigned_abs() {
                        out.push(sym);
                    }
                }
                Element { word: out }
            }
            GroupKind::Table { rules } => Element {
                word: rewrite_to_fixpoint(word, rules),
            },
        }
    }

    pub fn multiply(&self, a: &Element, b: &Element) -> Element {
        let mut word = Vec::with_capacity(a.word.len() + b.word.len());
        word.extend_from_slice(&a.word);
        word.extend_from_slice(&b.word);
        self.reduce_word(&word)
    }

    pub fn right_multiply_sym(&self, a: &Element, s: Sym) -> Element {
        let mut word = Vec::with_capacity(a.word.len() + 1);
        word.extend_from_slice(&a.word);
        word.push(s);
        self.reduce_word(&word)
    }

    pub fn inverse(&self, a: &Element) -> Element {
        let word: Vec<Sym> = a.word.iter().rev().map(|s| s.inverse()).collect();
        self.reduce_word(&word)
    }

    /// Word-metric distance, exact wherever normal forms are geodesic.
    pub fn distance(&self, a: &Element, b: &Element) -> u32 {
        self.multiply(&self.inverse(a), b).word_len()
    }

    /// Canonical representative of the left coset `g * H_p`, the
    /// lexicographically least member of minimal word length.
    pub fn coset_of(&self, g: &Element, peripheral: usize) -> Result<CosetId, GroupError> {
        let p = self
            .peripherals
            .get(peripheral)
            .ok_or(GroupError::PeripheralOutOfRange(peripheral, self.peripherals.len()))?;
        let in_p = |s: Sym| p.gens.binary_search(&s.gen_index()).is_ok();
        let rep = match &self.kind {
            GroupKind::Free | GroupKind::FreeProductOfCyclics { .. } => {
                // Strip trailing peripheral letters. The remainder cannot
                // shrink further: appending any peripheral word adds a
                // syllable that cannot cancel across the boundary.
                let mut word = g.word.clone();
                while let Some(&last) = word.last() {
                    if in_p(last) {
                        word.pop();
                    } else {
                        break;
                    }
                }
                self.reduce_word(&word)
            }
            GroupKind::FreeAbelian => {
                let word: Vec<Sym> = g
                    .word
                    .iter()
                    .copied()
                    .filter(|&s| !in_p(s))
                    .collect();
                self.reduce_word(&word)
            }
            GroupKind::Table { .. } => {
                // Bounded search over right multiplication by peripheral
                // generators, keeping the least (length, word) visited.
                let mut syms = Vec::new();
                for &gi in &p.gens {
                    syms.push(Sym::gen(gi, false));
                    syms.push(Sym::gen(gi, true));
                }
                let cap = g.word_len() + 1;
                let mut best = g.clone();
                let mut seen: HashMap<Vec<Sym>, ()> = HashMap::new();
                seen.insert(g.word.clone(), ());
                let mut frontier = vec![g.clone()];
                while let Some(cur) = frontier.pop() {
                    for &s in &syms {
                        let next = self.right_multiply_sym(&cur, s);
                        if next.word_len() > cap || seen.contains_key(&next.word) {
                            continue;
                        }
                        if next < best {
                            best = next.clone();
                        }
                        seen.insert(next.word.clone(), ());
                        frontier.push(next);
                    }
                }
                best
            }
        };
        Ok(CosetId { peripheral, rep })
    }

    /// Word length of `h` inside the peripheral subgroup's own generating
    /// set. Errors if `h` is not visibly a peripheral element.
    pub fn peripheral_length(&self, h: &Element, peripheral: usize) -> Result<u32, GroupError> {
        let p = self
            .peripherals
            .get(peripheral)
            .ok_or(GroupError::PeripheralOutOfRange(peripheral, self.peripherals.len()))?;
        let ok = h
            .word
            .iter()
            .all(|s| p.gens.binary_search(&s.gen_index()).is_ok());
        if !ok {
            return Err(GroupError::NotPeripheral(self.format_word(&h.word), peripheral));
        }
        Ok(h.word_len())
    }

    /// Intrinsic distance between two members of one coset, measured inside
    /// the peripheral subgroup.
    pub fn peripheral_distance(
        &self,
        a: &Element,
        b: &Element,
        peripheral: usize,
    ) -> Result<u32, GroupError> {
        let h = self.multiply(&self.inverse(a), b);
        self.peripheral_length(&h, peripheral)
    }

    pub fn format_word(&self, word: &[Sym]) -> String {
        if word.is_empty() {
            return "e".to_string();
        }
        let mut out = String::new();
        for (i, s) in word.iter().enumerate() {
            if i > 0 {
                out.push('.');
            }
            out.push_str(&self.gen_names[s.gen_index()]);
            if s.is_inverse() {
                out.push('\'');
            }
        }
        out
    }

    pub fn format_element(&self, e: &Element) -> String {
        self.format_word(&e.word)
    }

    /// Parses a word: tokens separated by whitespace or dots, each a
    /// generator name with optional `'` (inverse) and `^k` (power) suffixes;
    /// `e` alone is the identity.
    pub fn parse_word(&self, text: &str) -> Result<Element, GroupError> {
        let mut word = Vec::new();
        let tokens: Vec<&str> = text
            .split(|c: char| c.is_whitespace() || c == '.')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.len() == 1 && tokens[0] == "e" {
            return Ok(Element::identity());
        }
        for (pos, token) in tokens.iter().enumerate() {
            let (base, power) = match token.split_once('^') {
                Some((b, p)) => {
                    let power: i64 = p.parse().map_err(|_| GroupError::UnknownSymbol {
                        token: token.to_string(),
                        pos: pos + 1,
                    })?;
                    (b, power)
                }
                None => (*token, 1),
            };
            let (name, inverse) = match base.strip_suffix('\'') {
                Some(n) => (n, true),
                None => (base, false),
            };
            let idx = self
                .gen_names
                .iter()
                .position(|g| g == name)
                .ok_or_else(|| GroupError::UnknownSymbol {
                    token: token.to_string(),
                    pos: pos + 1,
                })?;
            let sym = Sym::gen(idx, inverse != (power < 0));
            for _ in 0..power.unsigned_abs() {
                word.push(sym);
            }
        }
        Ok(self.reduce_word(&word))
    }
}

/// Left coset handle: peripheral index plus canonical representative.
/// Equal ids exactly when the cosets coincide.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CosetId {
    pub peripheral: usize,
    pub rep: Element,
}

impl PartialOrd for CosetId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CosetId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.peripheral
            .cmp(&other.peripheral)
            .then_with(|| self.rep.cmp(&other.rep))
    }
}

impl fmt::Display for CosetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "H{}@", self.peripheral)?;
        if self.rep.word.is_empty() {
            write!(f, "e")
        } else {
            for (i, s) in self.rep.word.iter().enumerate() {
                if i > 0 {
                    write!(f, ".")?;
                }
                write!(f, "g{}{}", s.gen_index(), if s.is_inverse() { "'" } else { "" })?;
            }
            Ok(())
        }
    }
}

/// Ball in the word metric: elements sorted by (length, lexicographic word),
/// with an index for membership queries.
#[derive(Debug, Clone)]
pub struct GroupBall {
    pub radius: u32,
    pub elements: Vec<Element>,
    index: HashMap<Vec<Sym>, u32>,
}

impl GroupBall {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn id_of(&self, e: &Element) -> Option<u32> {
        self.index.get(e.word()).copied()
    }

    pub fn get(&self, id: u32) -> &Element {
        &self.elements[id as usize]
    }
}

/// Breadth-first ball enumeration in deterministic (length, lex) order.
/// Rejects radii whose ball would blow past `budget` vertices, reporting
/// how many elements had already been seen.
pub fn enumerate_ball(
    spec: &GroupSpec,
    radius: u32,
    budget: usize,
) -> Result<GroupBall, GroupError> {
    spec.validate()?;
    let syms = spec.edge_symbols();
    let mut seen: HashMap<Vec<Sym>, u32> = HashMap::new();
    let identity = Element::identity();
    seen.insert(identity.word.clone(), 0);
    let mut layers: Vec<Vec<Element>> = vec![vec![identity]];
    for depth in 1..=radius {
        let mut layer: Vec<Element> = Vec::new();
        for e in &layers[(depth - 1) as usize] {
            for &s in &syms {
                let next = spec.right_multiply_sym(e, s);
                if seen.contains_key(&next.word) {
                    continue;
                }
                if next.word_len() != depth {
                    return Err(GroupError::TableNotGeodesic {
                        word: spec.format_word(&next.word),
                        nf_len: next.word_len(),
                        depth,
                    });
                }
                seen.insert(next.word.clone(), 0);
                layer.push(next);
                if seen.len() > budget {
                    return Err(GroupError::BudgetExceeded {
                        radius,
                        budget,
                        seen: seen.len(),
                    });
                }
            }
        }
        layer.sort_unstable_by(|a, b| a.word.cmp(&b.word));
        if layer.is_empty() {
            break;
        }
        layers.push(layer);
    }
    let mut elements = Vec::with_capacity(seen.len());
    for layer in layers {
        elements.extend(layer);
    }
    let mut index = HashMap::with_capacity(elements.len());
    for (i, e) in elements.iter().enumerate() {
        index.insert(e.word.clone(), i as u32);
    }
    Ok(GroupBall {
        radius,
        elements,
        index,
    })
}

/// Syllable-stack reduction shared by the free and free-product kinds.
/// `order(g)` is the cyclic order of generator `g` (0 for infinite).
fn reduce_syllables(word: &[Sym], order: impl Fn(usize) -> u32) -> Vec<Sym> {
    let mut stack: Vec<(usize, i64)> = Vec::new();
    for s in word {
        let g = s.gen_index();
        let delta = if s.is_inverse() { -1i64 } else { 1 };
        match stack.last_mut() {
            Some((top, e)) if *top == g => {
                *e = normalize_exp(*e + delta, order(g));
                if *e == 0 {
                    stack.pop();
                }
            }
            _ => {
                let e = normalize_exp(delta, order(g));
                if e != 0 {
                    stack.push((g, e));
                }
            }
        }
    }
    let mut out = Vec::new();
    for (g, e) in stack {
        let sym = Sym::gen(g, e < 0);
        for _ in 0..e.unsigned_abs() {
            out.push(sym);
        }
    }
    out
}

/// Minimal-length exponent representative mod `order`; ties between k/2 and
/// -k/2 resolve to the positive one.
fn normalize_exp(e: i64, order: u32) -> i64 {
    if order == 0 {
        return e;
    }
    let k = order as i64;
    let mut r = e.rem_euclid(k);
    if 2 * r > k {
        r -= k;
    }
    r
}

fn shortlex_less(a: &[Sym], b: &[Sym]) -> bool {
    (a.len(), a) < (b.len(), b)
}

/// Applies free reduction and the table's rules, leftmost match first,
/// until no rule applies. Terminates because every step shrinks the word
/// in shortlex order.
fn rewrite_to_fixpoint(word: &[Sym], rules: &[RewriteRule]) -> Vec<Sym> {
    let mut w: Vec<Sym> = word.to_vec();
    'outer: loop {
        for i in 0..w.len() {
            if i + 1 < w.len() && w[i + 1] == w[i].inverse() {
                w.drain(i..i + 2);
                continue 'outer;
            }
            for rule in rules {
                if w[i..].starts_with(&rule.lhs) {
                    w.splice(i..i + rule.lhs.len(), rule.rhs.iter().copied());
                    continue 'outer;
                }
            }
        }
        return w;
    }
}

/// Parses the line-oriented group spec format:
///
/// ```text
/// # free group relative to the cyclic subgroup on a
/// kind free
/// generators a b
/// peripheral a
/// ```
///
/// Directives: `kind` (free | free-abelian | free-product-of-cyclics |
/// table), `generators` (names), `order <gen> <n>` (cyclics; 0 = infinite),
/// `rule <lhs tokens> -> <rhs tokens>` (table), `peripheral <gens>`.
/// Errors cite 1-based line numbers.
pub fn parse_group_spec(text: &str) -> Result<GroupSpec, GroupError> {
    let err = |line: usize, msg: String| GroupError::Parse { line, msg };
    let mut kind_name: Option<(usize, String)> = None;
    let mut gen_names: Vec<String> = Vec::new();
    let mut orders: HashMap<String, (usize, u32)> = HashMap::new();
    let mut rules_src: Vec<(usize, String)> = Vec::new();
    let mut peripherals_src: Vec<(usize, Vec<String>)> = Vec::new();

    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (dir, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match dir {
            "kind" => {
                if kind_name.is_some() {
                    return Err(err(ln, "duplicate `kind` directive".into()));
                }
                kind_name = Some((ln, rest.to_string()));
            }
            "generators" => {
                if !gen_names.is_empty() {
                    return Err(err(ln, "duplicate `generators` directive".into()));
                }
                for name in rest.split_whitespace() {
                    if name == "e" || name.contains('\'') || name.contains('^') {
                        return Err(err(ln, format!("reserved generator name `{}`", name)));
                    }
                    if gen_names.iter().any(|g| g == name) {
                        return Err(err(ln, format!("duplicate generator `{}`", name)));
                    }
                    gen_names.push(name.to_string());
                }
                if gen_names.is_empty() {
                    return Err(err(ln, "`generators` needs at least one name".into()));
                }
            }
            "order" => {
                let mut it = rest.split_whitespace();
                let name = it
                    .next()
                    .ok_or_else(|| err(ln, "`order` needs a generator name".into()))?;
                let n: u32 = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err(ln, "`order` needs a non-negative integer".into()))?;
                if n == 1 {
                    return Err(err(ln, "order 1 would make the generator trivial".into()));
                }
                orders.insert(name.to_string(), (ln, n));
            }
            "rule" => rules_src.push((ln, rest.to_string())),
            "peripheral" => {
                let names: Vec<String> = rest.split_whitespace().map(|s| s.to_string()).collect();
                if names.is_empty() {
                    return Err(err(ln, "`peripheral` needs at least one generator".into()));
                }
                peripherals_src.push((ln, names));
            }
            other => return Err(err(ln, format!("unknown directive `{}`", other))),
        }
    }

    let (kind_line, kind_name) =
        kind_name.ok_or_else(|| err(1, "missing `kind` directive".into()))?;
    if gen_names.is_empty() {
        return Err(err(kind_line, "missing `generators` directive".into()));
    }

    let gen_index = |name: &str| gen_names.iter().position(|g| g == name);
    let parse_syms = |ln: usize, text: &str| -> Result<Vec<Sym>, GroupError> {
        let mut out = Vec::new();
        for token in text.split_whitespace() {
            let (name, inverse) = match token.strip_suffix('\'') {
                Some(n) => (n, true),
                None => (token, false),
            };
            let idx = gen_index(name)
                .ok_or_else(|| err(ln, format!("unknown generator `{}` in rule", token)))?;
            out.push(Sym::gen(idx, inverse));
        }
        Ok(out)
    };

    let kind = match kind_name.as_str() {
        "free" => GroupKind::Free,
        "free-abelian" => GroupKind::FreeAbelian,
        "free-product-of-cyclics" => {
            let mut ords = Vec::with_capacity(gen_names.len());
            for name in &gen_names {
                let (_, n) = orders.get(name).copied().ok_or_else(|| {
                    err(kind_line, format!("missing `order` for generator `{}`", name))
                })?;
                ords.push(n);
            }
            for (name, (ln, _)) in &orders {
                if gen_index(name).is_none() {
                    return Err(err(*ln, format!("`order` names unknown generator `{}`", name)));
                }
            }
            GroupKind::FreeProductOfCyclics { orders: ords }
        }
        "table" => {
            let mut rules = Vec::new();
            for (ln, src) in &rules_src {
                let (lhs, rhs) = src
                    .split_once("->")
                    .ok_or_else(|| err(*ln, "rule needs `lhs -> rhs`".into()))?;
                let lhs = parse_syms(*ln, lhs)?;
                let rhs = parse_syms(*ln, rhs)?;
                if lhs.is_empty() {
                    return Err(err(*ln, "rule left side must be non-empty".into()));
                }
                if !shortlex_less(&rhs, &lhs) {
                    return Err(err(*ln, "rule right side must be shortlex-smaller than the left".into()));
                }
                rules.push(RewriteRule { lhs, rhs });
            }
            GroupKind::Table { rules }
        }
        other => return Err(err(kind_line, format!("unknown kind `{}`", other))),
    };

    if !matches!(kind, GroupKind::FreeProductOfCyclics { .. }) && !orders.is_empty() {
        let (ln, _) = orders.values().next().unwrap();
        return Err(err(*ln, "`order` is only valid for free-product-of-cyclics".into()));
    }
    if !matches!(kind, GroupKind::Table { .. }) && !rules_src.is_empty() {
        return Err(err(rules_src[0].0, "`rule` is only valid for the table kind".into()));
    }

    let mut peripherals = Vec::new();
    for (ln, names) in peripherals_src {
        let mut gens = Vec::new();
        for name in &names {
            let idx = gen_index(name)
                .ok_or_else(|| err(ln, format!("`peripheral` names unknown generator `{}`", name)))?;
            gens.push(idx);
        }
        gens.sort_unstable();
        gens.dedup();
        peripherals.push(Peripheral { gens });
    }

    let spec = GroupSpec {
        kind,
        gen_names,
        peripherals,
    };
    spec.validate().map_err(|e| match e {
        GroupError::RuleNotReducing { index } => err(
            rules_src.get(index).map(|(ln, _)| *ln).unwrap_or(1),
            "rule right side must be shortlex-smaller than the left".into(),
        ),
        other => other,
    })?;
    Ok(spec)
}

/// Free group on a, b with the redundant generator c = a b, as a geodesic
/// rewriting table. Used to compare word metrics across generating sets.
pub fn free_ab_with_product_generator() -> GroupSpec {
    let text = "\
kind table
generators a b c
rule a b -> c
rule b' a' -> c'
rule a' c -> b
rule c b' -> a
rule c' a -> b'
rule b c' -> a'
";
    parse_group_spec(text).expect("built-in table parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(spec: &GroupSpec, text: &str) -> Element {
        spec.parse_word(text).unwrap()
    }

    #[test]
    fn free_reduction_cancels() {
        let f = GroupSpec::free(&["a", "b"]);
        assert_eq!(w(&f, "a b b' a'"), Element::identity());
        assert_eq!(w(&f, "a b b' b"), w(&f, "a b"));
        assert_eq!(w(&f, "a a' a"), w(&f, "a"));
    }

    #[test]
    fn reduce_is_retraction_random_words() {
        // 1000 random words per kind: reducing a normal form is the identity.
        let specs = vec![
            GroupSpec::free(&["a", "b"]),
            GroupSpec::free_abelian(&["a", "b"]),
            GroupSpec::free_product_of_cyclics(&["x", "y"], &[2, 3]),
            free_ab_with_product_generator(),
        ];
        let mut state = 0x243f6a8885a308d3u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for spec in specs {
            let nsyms = spec.generator_count() * 2;
            for _ in 0..1000 {
                let len = (next() % 12) as usize;
                let word: Vec<Sym> = (0..len)
                    .map(|_| {
                        let r = (next() % nsyms as u64) as usize;
                        Sym::gen(r / 2, r % 2 == 1)
                    })
                    .collect();
                let e = spec.reduce_word(&word);
                let again = spec.reduce_word(e.word());
                assert_eq!(e, again, "kind {:?}", spec.kind);
            }
        }
    }

    #[test]
    fn abelian_normal_form_sorts_generators() {
        let z2 = GroupSpec::free_abelian(&["a", "b"]);
        assert_eq!(w(&z2, "b a"), w(&z2, "a b"));
        assert_eq!(w(&z2, "b a b a' b'"), w(&z2, "b"));
        assert_eq!(w(&z2, "a b").word_len(), 2);
    }

    #[test]
    fn cyclic_orders_wrap() {
        let g = GroupSpec::free_product_of_cyclics(&["x", "y"], &[2, 3]);
        assert_eq!(w(&g, "x x"), Element::identity());
        assert_eq!(w(&g, "y y y"), Element::identity());
        // y^2 = y^-1 in Z/3, so its normal form has length 1.
        assert_eq!(w(&g, "y y"), w(&g, "y'"));
        assert_eq!(w(&g, "y y").word_len(), 1);
        // x^-1 = x in Z/2.
        assert_eq!(w(&g, "x'"), w(&g, "x"));
    }

    #[test]
    fn free_ball_sizes_match_closed_form() {
        // |B(r)| in F(a, b) is 1 + 2(3^r - 1).
        let f = GroupSpec::free(&["a", "b"]);
        for r in 0..=6u32 {
            let ball = enumerate_ball(&f, r, 1 << 20).unwrap();
            let expect = 1 + 2 * (3usize.pow(r) - 1);
            assert_eq!(ball.len(), expect, "radius {}", r);
        }
    }

    #[test]
    fn free_ball_matches_brute_force_enumeration() {
        // Oracle: reduce every raw word of length <= r with a test-local
        // reducer and count distinct results.
        fn free_reduce_local(word: &[u8]) -> Vec<u8> {
            // symbols 0..4, inverse pairs (0,1) and (2,3)
            let mut st: Vec<u8> = Vec::new();
            for &s in word {
                if let Some(&t) = st.last() {
                    if t ^ 1 == s {
                        st.pop();
                        continue;
                    }
                }
                st.push(s);
            }
            st
        }
        let f = GroupSpec::free(&["a", "b"]);
        for r in 0..=6u32 {
            let mut seen = std::collections::HashSet::new();
            let mut words: Vec<Vec<u8>> = vec![Vec::new()];
            seen.insert(Vec::new());
            for _ in 0..r {
                let mut next_words = Vec::new();
                for wd in &words {
                    for s in 0..4u8 {
                        let mut nw = wd.clone();
                        nw.push(s);
                        let red = free_reduce_local(&nw);
                        if seen.insert(red.clone()) {
                            next_words.push(red);
                        }
                    }
                }
                words = next_words;
            }
            let ball = enumerate_ball(&f, r, 1 << 20).unwrap();
            assert_eq!(ball.len(), seen.len(), "radius {}", r);
        }
    }

    #[test]
    fn abelian_ball_sizes() {
        // |B(r)| in Z^2 is 2r^2 + 2r + 1.
        let z2 = GroupSpec::free_abelian(&["a", "b"]);
        for r in 0..=8u32 {
            let ball = enumerate_ball(&z2, r, 1 << 20).unwrap();
            let r = r as usize;
            assert_eq!(ball.len(), 2 * r * r + 2 * r + 1);
        }
    }

    #[test]
    fn modular_ball_sizes() {
        // Z/2 * Z/3: sphere counts follow f(n,x) = f(n-1,y), f(n,y) = 2 f(n-1,x),
        // giving ball sizes 1, 4, 8, 14, 22.
        let g = GroupSpec::free_product_of_cyclics(&["x", "y"], &[2, 3]);
        let expect = [1usize, 4, 8, 14, 22];
        for (r, &n) in expect.iter().enumerate() {
            let ball = enumerate_ball(&g, r as u32, 1 << 20).unwrap();
            assert_eq!(ball.len(), n, "radius {}", r);
        }
    }

    #[test]
    fn ball_order_is_length_then_lex() {
        let f = GroupSpec::free(&["a", "b"]);
        let ball = enumerate_ball(&f, 2, 1 << 20).unwrap();
        for pair in ball.elements.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert_eq!(ball.elements[0], Element::identity());
        assert_eq!(ball.elements[1], w(&f, "a"));
    }

    #[test]
    fn ball_budget_rejected_with_projection() {
        let f = GroupSpec::free(&["a", "b"]);
        match enumerate_ball(&f, 8, 100) {
            Err(GroupError::BudgetExceeded { seen, budget, .. }) => {
                assert!(seen > budget);
            }
            other => panic!("expected budget error, got {:?}", other),
        }
    }

    #[test]
    fn distance_equals_cayley_bfs() {
        // d_G from normal forms agrees with BFS distance in the generated
        // Cayley ball, for every kind.
        use crate::graph::Graph;
        let specs = vec![
            GroupSpec::free(&["a", "b"]),
            GroupSpec::free_abelian(&["a", "b"]),
            GroupSpec::free_product_of_cyclics(&["x", "y"], &[2, 3]),
            free_ab_with_product_generator(),
        ];
        for spec in specs {
            let r = 4;
            let ball = enumerate_ball(&spec, r, 1 << 20).unwrap();
            let mut g = Graph::with_vertices(ball.len());
            for (i, e) in ball.elements.iter().enumerate() {
                for &s in &spec.edge_symbols() {
                    let n = spec.right_multiply_sym(e, s);
                    if let Some(j) = ball.id_of(&n) {
                        if i as u32 != j {
                            g.add_edge(i as u32, j).unwrap();
                        }
                    }
                }
            }
            let dist = g.bfs_distances(0).unwrap();
            for (i, e) in ball.elements.iter().enumerate() {
                // Interior elements see their true distance inside the ball.
                if e.word_len() < r {
                    assert_eq!(
                        dist[i].unwrap(),
                        e.word_len(),
                        "kind {:?} element {}",
                        spec.kind,
                        spec.format_element(e)
                    );
                }
            }
        }
    }

    #[test]
    fn product_generator_table_matches_brute_force_metric() {
        // Oracle: BFS over free-reduced words in a, b multiplying by
        // {a, b, ab} and inverses; ball sizes must match the table kind.
        fn mul(wd: &[i8], gens: &[i8]) -> Vec<i8> {
            let mut out = wd.to_vec();
            for &g in gens {
                if out.last() == Some(&-g) {
                    out.pop();
                } else {
                    out.push(g);
                }
            }
            out
        }
        let spec = free_ab_with_product_generator();
        // Letters: 1 = a, -1 = a', 2 = b, -2 = b'.
        let moves: Vec<Vec<i8>> = vec![
            vec![1],
            vec![-1],
            vec![2],
            vec![-2],
            vec![1, 2],
            vec![-2, -1],
        ];
        let mut seen = std::collections::HashSet::new();
        seen.insert(Vec::<i8>::new());
        let mut frontier = vec![Vec::<i8>::new()];
        let mut sizes = vec![1usize];
        for _ in 0..4 {
            let mut next = Vec::new();
            for wd in &frontier {
                for mv in &moves {
                    let n = mul(wd, mv);
                    if seen.insert(n.clone()) {
                        next.push(n);
                    }
                }
            }
            frontier = next;
            sizes.push(seen.len());
        }
        for (r, &expect) in sizes.iter().enumerate() {
            let ball = enumerate_ball(&spec, r as u32, 1 << 20).unwrap();
            assert_eq!(ball.len(), expect, "radius {}", r);
        }
    }

    #[test]
    fn coset_reps_canonical_free() {
        let f = GroupSpec::free(&["a", "b"]).with_peripheral(&[0]);
        let g1 = w(&f, "b a a");
        let g2 = w(&f, "b a'");
        let g3 = w(&f, "b");
        let c1 = f.coset_of(&g1, 0).unwrap();
        let c2 = f.coset_of(&g2, 0).unwrap();
        let c3 = f.coset_of(&g3, 0).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c2, c3);
        assert_eq!(c1.rep, w(&f, "b"));
        // Different coset.
        let d = f.coset_of(&w(&f, "a b"), 0).unwrap();
        assert_ne!(c1, d);
        assert_eq!(d.rep, w(&f, "a b"));
        // Identity coset.
        assert_eq!(f.coset_of(&w(&f, "a^3"), 0).unwrap().rep, Element::identity());
    }

    #[test]
    fn coset_invariant_under_right_multiplication() {
        // coset_of(g * p) == coset_of(g) for peripheral generators p.
        let specs = vec![
            GroupSpec::free(&["a", "b"]).with_peripheral(&[0]),
            GroupSpec::free_abelian(&["a", "b"]).with_peripheral(&[0]),
            GroupSpec::free_product_of_cyclics(&["x", "y"], &[0, 3]).with_peripheral(&[0]),
            {
                let mut t = free_ab_with_product_generator();
                t.peripherals.push(Peripheral { gens: vec![0] });
                t
            },
        ];
        for spec in specs {
            let ball = enumerate_ball(&spec, 3, 1 << 20).unwrap();
            let p_gens = [Sym::gen(0, false), Sym::gen(0, true)];
            for e in &ball.elements {
                let c = spec.coset_of(e, 0).unwrap();
                for &p in &p_gens {
                    let shifted = spec.right_multiply_sym(e, p);
                    let c2 = spec.coset_of(&shifted, 0).unwrap();
                    assert_eq!(c, c2, "kind {:?} at {}", spec.kind, spec.format_element(e));
                }
            }
        }
    }

    #[test]
    fn coset_partition_count_free_radius_3() {
        // Oracle: partition the radius-3 ball of F(a,b) by brute-force coset
        // comparison (g ~ h iff g^-1 h is a power of a within reach).
        let f = GroupSpec::free(&["a", "b"]).with_peripheral(&[0]);
        let ball = enumerate_ball(&f, 3, 1 << 20).unwrap();
        let mut classes: Vec<Vec<&Element>> = Vec::new();
        'outer: for e in &ball.elements {
            for class in classes.iter_mut() {
                let rep = class[0];
                let diff = f.multiply(&f.inverse(rep), e);
                let peripheral = diff.word().iter().all(|s| s.gen_index() == 0);
                if peripheral {
                    class.push(e);
                    continue 'outer;
                }
            }
            classes.push(vec![e]);
        }
        let mut ids: std::collections::HashSet<CosetId> = std::collections::HashSet::new();
        for e in &ball.elements {
            ids.insert(f.coset_of(e, 0).unwrap());
        }
        assert_eq!(ids.len(), classes.len());
    }

    #[test]
    fn rep_is_least_of_minimal_length_exhaustive() {
        // Within the enumerated ball, no coset member is (length, lex) smaller
        // than the canonical representative.
        let specs = vec![
            GroupSpec::free(&["a", "b"]).with_peripheral(&[0]),
            GroupSpec::free_abelian(&["a", "b"]).with_peripheral(&[1]),
        ];
        for spec in specs {
            let ball = enumerate_ball(&spec, 4, 1 << 20).unwrap();
            for e in &ball.elements {
                let c = spec.coset_of(e, 0).unwrap();
                assert!(c.rep <= *e);
                assert_eq!(spec.coset_of(&c.rep, 0).unwrap().rep, c.rep);
            }
        }
    }

    #[test]
    fn peripheral_distance_is_intrinsic() {
        let f = GroupSpec::free(&["a", "b"]).with_peripheral(&[0]);
        let x = w(&f, "b a^2");
        let y = w(&f, "b a^-3");
        assert_eq!(f.peripheral_distance(&x, &y, 0).unwrap(), 5);
        let z = w(&f, "a b");
        assert!(f.peripheral_distance(&x, &z, 0).is_err());
    }

    #[test]
    fn parse_word_errors_name_token() {
        let f = GroupSpec::free(&["a", "b"]);
        match f.parse_word("a q b") {
            Err(GroupError::UnknownSymbol { token, pos }) => {
                assert_eq!(token, "q");
                assert_eq!(pos, 2);
            }
            other => panic!("expected unknown symbol, got {:?}", other),
        }
    }

    #[test]
    fn parse_spec_round_trip() {
        let text = "\
# test group
kind free-product-of-cyclics
generators x y
order x 2
order y 3
peripheral y
";
        let spec = parse_group_spec(text).unwrap();
        assert_eq!(spec.gen_names, vec!["x", "y"]);
        assert_eq!(
            spec.kind,
            GroupKind::FreeProductOfCyclics { orders: vec![2, 3] }
        );
        assert_eq!(spec.peripherals.len(), 1);
        assert_eq!(spec.peripherals[0].gens, vec![1]);
    }

    #[test]
    fn parse_spec_errors_cite_lines() {
        let text = "kind free\ngenerators a b\norder a 2\n";
        match parse_group_spec(text) {
            Err(GroupError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {:?}", other),
        }
        let text2 = "kind free\ngenerators a a\n";
        match parse_group_spec(text2) {
            Err(GroupError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {:?}", other),
        }
        let text3 = "generators a\n";
        assert!(matches!(
            parse_group_spec(text3),
            Err(GroupError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn non_reducing_rule_rejected() {
        let text = "kind table\ngenerators a b c\nrule c -> a b\n";
        match parse_group_spec(text) {
            Err(GroupError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {:?}", other),
        }
    }
}
