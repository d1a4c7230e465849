//! Boundary traces: the events a target function can observe, their text
//! dump, and trace reduction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wasm::ValType;

/// Identity of a function reference as seen across the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FuncTag {
    Null,
    Target,
    /// A function of the input program, by input index.
    Function(u32),
    /// A function that is not part of the input program.
    Extern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceValue {
    I32(i32),
    I64(i64),
    F32(u32),
    F64(u64),
    FuncRef(FuncTag),
    /// Only null extern references can cross the boundary.
    ExternRef,
}

impl TraceValue {
    pub fn ty(&self) -> ValType {
        match self {
            TraceValue::I32(_) => ValType::I32,
            TraceValue::I64(_) => ValType::I64,
            TraceValue::F32(_) => ValType::F32,
            TraceValue::F64(_) => ValType::F64,
            TraceValue::FuncRef(_) => ValType::FuncRef,
            TraceValue::ExternRef => ValType::ExternRef,
        }
    }

    pub fn default_for(t: ValType) -> TraceValue {
        match t {
            ValType::I32 => TraceValue::I32(0),
            ValType::I64 => TraceValue::I64(0),
            ValType::F32 => TraceValue::F32(0),
            ValType::F64 => TraceValue::F64(0),
            ValType::FuncRef => TraceValue::FuncRef(FuncTag::Null),
            ValType::ExternRef => TraceValue::ExternRef,
        }
    }
}

/// Why control entered the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryOrigin {
    /// Called by code outside the target with no target activation open.
    External,
    /// Called by outside code while the target's out-call with this id was
    /// in progress.
    OutCall(u64),
    /// Called while the target activation with this id was already running
    /// with no outside code in between (recursion).
    Activation(u64),
}

/// The outside frame that performed a call into the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallerFrame {
    /// Input index of the calling function.
    pub func: u32,
    /// Unique frame id within the recording.
    pub frame: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    TargetEntry {
        export: String,
        args: Vec<TraceValue>,
        activation: u64,
        origin: EntryOrigin,
        caller: Option<CallerFrame>,
        /// Input indices of the outside frames on the stack, outermost
        /// first, down to the caller.
        chain: Vec<u32>,
    },
    OutCallReturn {
        import: String,
        call_id: u64,
        /// `None` when the call never returned (trap or exit inside it).
        results: Option<Vec<TraceValue>>,
        /// Events that happened while the call was in progress.
        nested: Vec<TraceEvent>,
    },
    MemoryWrite {
        offset: u32,
        bytes: Vec<u8>,
    },
    /// Memory grew to `pages` pages.
    MemoryGrow {
        pages: u32,
    },
    GlobalWrite {
        index: u32,
        value: TraceValue,
    },
    TableWrite {
        table: u32,
        slot: u32,
        tag: FuncTag,
    },
    /// Table `table` grew to `size` entries.
    TableGrow {
        table: u32,
        size: u32,
    },
}

impl TraceEvent {
    pub fn is_state_write(&self) -> bool {
        matches!(
            self,
            TraceEvent::MemoryWrite { .. }
                | TraceEvent::MemoryGrow { .. }
                | TraceEvent::GlobalWrite { .. }
                | TraceEvent::TableWrite { .. }
                | TraceEvent::TableGrow { .. }
        )
    }
}

/// State shared with the target when the outside module was instantiated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialState {
    /// `None` if the program has no memory.
    pub pages: Option<u32>,
    /// Non-zero byte runs of the initial memory image.
    pub memory: Vec<(u32, Vec<u8>)>,
    pub globals: Vec<TraceValue>,
    pub tables: Vec<Vec<FuncTag>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub entry: String,
    pub target: u32,
    pub initial: InitialState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

impl Trace {
    /// Number of target entries at any depth, of any origin.
    pub fn count_entries(&self) -> usize {
        fn count(evs: &[TraceEvent]) -> usize {
            evs.iter()
                .map(|e| match e {
                    TraceEvent::TargetEntry { .. } => 1,
                    TraceEvent::OutCallReturn { nested, .. } => count(nested),
                    _ => 0,
                })
                .sum()
        }
        count(&self.events)
    }

    /// Top-level target entries.
    pub fn top_level_entries(&self) -> Vec<&TraceEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e, TraceEvent::TargetEntry { .. }))
            .collect()
    }

    pub fn serialized_size(&self) -> usize {
        self.to_text().len()
    }

    /// Text dump, one event per line. Events nested in an out-call are
    /// indented two spaces more than the `RESULT` line that closes them.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        let _ = writeln!(s, "META entry {}", m.entry);
        let _ = writeln!(s, "META target {}", m.target);
        if let Some(p) = m.initial.pages {
            let _ = writeln!(s, "META pages {p}");
        }
        for (off, bytes) in &m.initial.memory {
            let _ = writeln!(s, "META mem {off} {}", hex::encode(bytes));
        }
        for (i, g) in m.initial.globals.iter().enumerate() {
            let _ = writeln!(s, "META global {i} {}", fmt_value(g));
        }
        for (i, t) in m.initial.tables.iter().enumerate() {
            let tags: Vec<String> = t.iter().map(fmt_tag).collect();
            let _ = writeln!(s, "META table {i} {}", tags.join(" ")).map(|_| ());
        }
        write_events(&mut s, &self.events, 0);
        s
    }

    pub fn from_text(text: &str) -> Result<Trace, TraceParseError> {
        let mut t = Trace::default();
        // Stack of event lists being built, one per nesting depth.
        let mut stack: Vec<Vec<TraceEvent>> = vec![Vec::new()];
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let err = |reason: &str| TraceParseError::Syntax {
                line,
                reason: reason.to_string(),
            };
            if raw.trim().is_empty() {
                continue;
            }
            let indent = raw.len() - raw.trim_start_matches(' ').len();
            if indent % 2 != 0 {
                return Err(err("odd indentation"));
            }
            let depth = indent / 2;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            if toks[0] == "META" {
                if depth != 0 || toks.len() < 3 {
                    return Err(err("malformed META line"));
                }
                parse_meta(&mut t.meta, &toks[1..]).map_err(|r| err(&r))?;
                continue;
            }
            if toks[0] == "RESULT" {
                // A RESULT closes the list one level deeper than itself.
                while stack.len() < depth + 2 {
                    stack.push(Vec::new());
                }
                if stack.len() > depth + 2 {
                    return Err(err("unclosed nested events"));
                }
                let nested = stack.pop().unwrap();
                let ev = parse_result(&toks, nested).map_err(|r| err(&r))?;
                stack.last_mut().unwrap().push(ev);
                continue;
            }
            while stack.len() < depth + 1 {
                stack.push(Vec::new());
            }
            if stack.len() > depth + 1 {
                return Err(err("nested events without RESULT"));
            }
            let ev = parse_event(&toks).map_err(|r| err(&r))?;
            stack.last_mut().unwrap().push(ev);
        }
        if stack.len() != 1 {
            return Err(TraceParseError::Syntax {
                line: text.lines().count(),
                reason: "trailing nested events without RESULT".into(),
            });
        }
        t.events = stack.pop().unwrap();
        Ok(t)
    }
}

fn write_events(s: &mut String, evs: &[TraceEvent], depth: usize) {
    let pad = "  ".repeat(depth);
    for e in evs {
        match e {
            TraceEvent::TargetEntry {
                export,
                args,
                activation,
                origin,
                caller,
                chain,
            } => {
                let _ = write!(s, "{pad}ENTRY {export}");
                for a in args {
                    let _ = write!(s, " {}", fmt_value(a));
                }
                let from = match origin {
                    EntryOrigin::External => "ext".to_string(),
                    EntryOrigin::OutCall(id) => format!("call:{id}"),
                    EntryOrigin::Activation(id) => format!("act:{id}"),
                };
                let caller = caller.map_or("-".to_string(), |c| format!("{}@{}", c.func, c.frame));
                let chain = if chain.is_empty() {
                    "-".to_string()
                } else {
                    chain.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
                };
                let _ = writeln!(s, " act={activation} from={from} caller={caller} chain={chain}");
            }
            TraceEvent::OutCallReturn {
                import,
                call_id,
                results,
                nested,
            } => {
                write_events(s, nested, depth + 1);
                let _ = write!(s, "{pad}RESULT {import}");
                match results {
                    None => {
                        let _ = write!(s, " unfinished");
                    }
                    Some(rs) => {
                        for r in rs {
                            let _ = write!(s, " {}", fmt_value(r));
                        }
                    }
                }
                let _ = writeln!(s, " call={call_id}");
            }
            TraceEvent::MemoryWrite { offset, bytes } => {
                let _ = writeln!(s, "{pad}MEMW {offset} {}", hex::encode(bytes));
            }
            TraceEvent::MemoryGrow { pages } => {
                let _ = writeln!(s, "{pad}GROW {pages}");
            }
            TraceEvent::GlobalWrite { index, value } => {
                let _ = writeln!(s, "{pad}GLOBW {index} {}", fmt_value(value));
            }
            TraceEvent::TableWrite { table, slot, tag } => {
                let _ = write!(s, "{pad}TABW {slot} {}", fmt_tag(tag));
                if *table != 0 {
                    let _ = write!(s, " table={table}");
                }
                s.push('\n');
            }
            TraceEvent::TableGrow { table, size } => {
                let _ = writeln!(s, "{pad}TABGROW {table} {size}");
            }
        }
    }
}

pub fn fmt_tag(t: &FuncTag) -> String {
    match t {
        FuncTag::Null => "null".into(),
        FuncTag::Target => "target".into(),
        FuncTag::Function(f) => format!("f:{f}"),
        FuncTag::Extern => "extern".into(),
    }
}

pub fn fmt_value(v: &TraceValue) -> String {
    match v {
        TraceValue::I32(x) => format!("i32:{x}"),
        TraceValue::I64(x) => format!("i64:{x}"),
        TraceValue::F32(b) => format!("f32:{b:#x}"),
        TraceValue::F64(b) => format!("f64:{b:#x}"),
        TraceValue::FuncRef(t) => format!("ref:{}", fmt_tag(t)),
        TraceValue::ExternRef => "externref:null".into(),
    }
}

fn parse_tag(s: &str) -> Result<FuncTag, String> {
    Ok(match s {
        "null" => FuncTag::Null,
        "target" => FuncTag::Target,
        "extern" => FuncTag::Extern,
        _ => match s.strip_prefix("f:") {
            Some(n) => FuncTag::Function(n.parse().map_err(|_| format!("bad tag {s}"))?),
            None => return Err(format!("bad tag {s}")),
        },
    })
}

fn parse_hex_u64(s: &str) -> Result<u64, String> {
    let h = s.strip_prefix("0x").ok_or_else(|| format!("bad float bits {s}"))?;
    u64::from_str_radix(h, 16).map_err(|_| format!("bad float bits {s}"))
}

fn parse_value(s: &str) -> Result<TraceValue, String> {
    let (ty, v) = s.split_once(':').ok_or_else(|| format!("bad value {s}"))?;
    let bad = || format!("bad value {s}");
    Ok(match ty {
        "i32" => TraceValue::I32(v.parse().map_err(|_| bad())?),
        "i64" => TraceValue::I64(v.parse().map_err(|_| bad())?),
        "f32" => TraceValue::F32(parse_hex_u64(v)? as u32),
        "f64" => TraceValue::F64(parse_hex_u64(v)?),
        "ref" => TraceValue::FuncRef(parse_tag(v)?),
        "externref" if v == "null" => TraceValue::ExternRef,
        _ => return Err(bad()),
    })
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad number {s}"))
}

fn parse_meta(m: &mut TraceMeta, toks: &[&str]) -> Result<(), String> {
    match toks[0] {
        "entry" => m.entry = toks[1].to_string(),
        "target" => m.target = num(toks[1])?,
        "pages" => m.initial.pages = Some(num(toks[1])?),
        "mem" => {
            let bytes = hex::decode(toks.get(2).ok_or("missing bytes")?).map_err(|e| e.to_string())?;
            m.initial.memory.push((num(toks[1])?, bytes));
        }
        "global" => {
            let i: usize = num(toks[1])?;
            if i != m.initial.globals.len() {
                return Err("globals out of order".into());
            }
            m.initial.globals.push(parse_value(toks.get(2).ok_or("missing value")?)?);
        }
        "table" => {
            let i: usize = num(toks[1])?;
            if i != m.initial.tables.len() {
                return Err("tables out of order".into());
            }
            let tags = toks[2..].iter().map(|t| parse_tag(t)).collect::<Result<_, _>>()?;
            m.initial.tables.push(tags);
        }
        other => return Err(format!("unknown META key {other}")),
    }
    Ok(())
}

fn parse_result(toks: &[&str], nested: Vec<TraceEvent>) -> Result<TraceEvent, String> {
    if toks.len() < 3 {
        return Err("malformed RESULT".into());
    }
    let import = toks[1].to_string();
    let last = toks[toks.len() - 1];
    let call_id = num(last.strip_prefix("call=").ok_or("missing call=")?)?;
    let body = &toks[2..toks.len() - 1];
    let results = if body == ["unfinished"] {
        None
    } else {
        Some(body.iter().map(|v| parse_value(v)).collect::<Result<_, _>>()?)
    };
    Ok(TraceEvent::OutCallReturn {
        import,
        call_id,
        results,
        nested,
    })
}

fn parse_event(toks: &[&str]) -> Result<TraceEvent, String> {
    let arg = |i: usize| toks.get(i).copied().ok_or_else(|| format!("missing field in {}", toks[0]));
    Ok(match toks[0] {
        "ENTRY" => {
            let export = arg(1)?.to_string();
            let mut args = Vec::new();
            let (mut activation, mut origin, mut caller, mut chain) =
                (None, None, None, Vec::new());
            for t in &toks[2..] {
                if let Some(v) = t.strip_prefix("act=") {
                    activation = Some(num(v)?);
                } else if let Some(v) = t.strip_prefix("from=") {
                    origin = Some(if v == "ext" {
                        EntryOrigin::External
                    } else if let Some(id) = v.strip_prefix("call:") {
                        EntryOrigin::OutCall(num(id)?)
                    } else if let Some(id) = v.strip_prefix("act:") {
                        EntryOrigin::Activation(num(id)?)
                    } else {
                        return Err(format!("bad origin {v}"));
                    });
                } else if let Some(v) = t.strip_prefix("caller=") {
                    if v != "-" {
                        let (f, fr) = v.split_once('@').ok_or("bad caller")?;
                        caller = Some(CallerFrame {
                            func: num(f)?,
                            frame: num(fr)?,
                        });
                    }
                } else if let Some(v) = t.strip_prefix("chain=") {
                    if v != "-" {
                        chain = v.split(',').map(num).collect::<Result<_, _>>()?;
                    }
                } else {
                    args.push(parse_value(t)?);
                }
            }
            TraceEvent::TargetEntry {
                export,
                args,
                activation: activation.ok_or("missing act=")?,
                origin: origin.ok_or("missing from=")?,
                caller,
                chain,
            }
        }
        "MEMW" => TraceEvent::MemoryWrite {
            offset: num(arg(1)?)?,
            bytes: hex::decode(arg(2)?).map_err(|e| e.to_string())?,
        },
        "GROW" => TraceEvent::MemoryGrow {
            pages: num(arg(1)?)?,
        },
        "GLOBW" => TraceEvent::GlobalWrite {
            index: num(arg(1)?)?,
            value: parse_value(arg(2)?)?,
        },
        "TABW" => {
            let table = match toks.get(3) {
                Some(t) => num(t.strip_prefix("table=").ok_or("bad table field")?)?,
                None => 0,
            };
            TraceEvent::TableWrite {
                table,
                slot: num(arg(1)?)?,
                tag: parse_tag(arg(2)?)?,
            }
        }
        "TABGROW" => TraceEvent::TableGrow {
            table: num(arg(1)?)?,
            size: num(arg(2)?)?,
        },
        other => return Err(format!("unknown event {other}")),
    })
}

/// Values the reducer knows to hold before the target first runs.
struct Established {
    memory: BTreeMap<u32, u8>,
    globals: Vec<TraceValue>,
    tables: Vec<Vec<FuncTag>>,
}

impl Established {
    fn from_initial(init: &InitialState) -> Established {
        let mut memory = BTreeMap::new();
        for (off, bytes) in &init.memory {
            for (i, b) in bytes.iter().enumerate() {
                memory.insert(off + i as u32, *b);
            }
        }
        Established {
            memory,
            globals: init.globals.clone(),
            tables: init.tables.clone(),
        }
    }

    fn byte(&self, addr: u32) -> u8 {
        self.memory.get(&addr).copied().unwrap_or(0)
    }

    /// Whether `e` is redundant, then record its effect.
    fn redundant_then_apply(&mut self, e: &TraceEvent) -> bool {
        match e {
            TraceEvent::MemoryWrite { offset, bytes } => {
                let same = bytes
                    .iter()
                    .enumerate()
                    .all(|(i, b)| self.byte(offset + i as u32) == *b);
                for (i, b) in bytes.iter().enumerate() {
                    self.memory.insert(offset + i as u32, *b);
                }
                same
            }
            TraceEvent::GlobalWrite { index, value } => {
                let i = *index as usize;
                let same = self.globals.get(i) == Some(value);
                if i < self.globals.len() {
                    self.globals[i] = *value;
                }
                same
            }
            TraceEvent::TableWrite { table, slot, tag } => {
                match self.tables.get_mut(*table as usize).and_then(|t| t.get_mut(*slot as usize)) {
                    Some(cur) => {
                        let same = cur == tag;
                        *cur = *tag;
                        same
                    }
                    None => false,
                }
            }
            TraceEvent::TableGrow { table, size } => {
                if let Some(t) = self.tables.get_mut(*table as usize) {
                    let same = t.len() == *size as usize;
                    t.resize(*size as usize, FuncTag::Null);
                    return same;
                }
                false
            }
            _ => false,
        }
    }
}

/// Canonical form of one run of consecutive state writes: memory growth,
/// table growth, global writes, table writes, then merged memory runs.
/// Later writes to the same location win.
fn canonicalize_writes(run: &[TraceEvent]) -> Vec<TraceEvent> {
    let mut grow: Option<u32> = None;
    let mut table_grow: BTreeMap<u32, u32> = BTreeMap::new();
    let mut globals: BTreeMap<u32, TraceValue> = BTreeMap::new();
    let mut table_writes: BTreeMap<(u32, u32), FuncTag> = BTreeMap::new();
    let mut bytes: BTreeMap<u32, u8> = BTreeMap::new();
    for e in run {
        match e {
            TraceEvent::MemoryGrow { pages } => grow = Some(grow.map_or(*pages, |g| g.max(*pages))),
            TraceEvent::TableGrow { table, size } => {
                let s = table_grow.entry(*table).or_insert(*size);
                *s = (*s).max(*size);
            }
            TraceEvent::GlobalWrite { index, value } => {
                globals.insert(*index, *value);
            }
            TraceEvent::TableWrite { table, slot, tag } => {
                table_writes.insert((*table, *slot), *tag);
            }
            TraceEvent::MemoryWrite { offset, bytes: b } => {
                for (i, x) in b.iter().enumerate() {
                    bytes.insert(offset + i as u32, *x);
                }
            }
            _ => unreachable!("not a state write"),
        }
    }
    let mut out = Vec::new();
    if let Some(pages) = grow {
        out.push(TraceEvent::MemoryGrow { pages });
    }
    out.extend(
        table_grow
            .into_iter()
            .map(|(table, size)| TraceEvent::TableGrow { table, size }),
    );
    out.extend(
        globals
            .into_iter()
            .map(|(index, value)| TraceEvent::GlobalWrite { index, value }),
    );
    out.extend(
        table_writes
            .into_iter()
            .map(|((table, slot), tag)| TraceEvent::TableWrite { table, slot, tag }),
    );
    let mut cur: Option<(u32, Vec<u8>)> = None;
    for (addr, b) in bytes {
        match &mut cur {
            Some((start, run)) if *start as u64 + run.len() as u64 == addr as u64 => run.push(b),
            _ => {
                if let Some((offset, bytes)) = cur.take() {
                    out.push(TraceEvent::MemoryWrite { offset, bytes });
                }
                cur = Some((addr, vec![b]));
            }
        }
    }
    if let Some((offset, bytes)) = cur {
        out.push(TraceEvent::MemoryWrite { offset, bytes });
    }
    out
}

fn is_recursive_entry(e: &TraceEvent) -> bool {
    matches!(
        e,
        TraceEvent::TargetEntry {
            origin: EntryOrigin::Activation(_),
            ..
        }
    )
}

fn reduce_list(evs: &[TraceEvent], est: &mut Option<Established>) -> Vec<TraceEvent> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < evs.len() {
        if evs[i].is_state_write() {
            // Recursive entries are dropped, so writes on either side of
            // them form one run.
            let mut run = Vec::new();
            while i < evs.len() && (evs[i].is_state_write() || is_recursive_entry(&evs[i])) {
                if evs[i].is_state_write() {
                    run.push(evs[i].clone());
                }
                i += 1;
            }
            for w in canonicalize_writes(&run) {
                let redundant = est.as_mut().is_some_and(|e| e.redundant_then_apply(&w));
                if !redundant {
                    out.push(w);
                }
            }
            continue;
        }
        match &evs[i] {
            TraceEvent::TargetEntry {
                origin: EntryOrigin::Activation(_),
                ..
            } => {}
            TraceEvent::TargetEntry { .. } => {
                // The target may now change any state, so nothing is
                // established any more.
                *est = None;
                out.push(evs[i].clone());
            }
            TraceEvent::OutCallReturn {
                import,
                call_id,
                results,
                nested,
            } => {
                *est = None;
                out.push(TraceEvent::OutCallReturn {
                    import: import.clone(),
                    call_id: *call_id,
                    results: results.clone(),
                    nested: reduce_list(nested, est),
                });
            }
            _ => unreachable!(),
        }
        i += 1;
    }
    out
}

/// Reduce a trace: drop entries that are internal to a target activation,
/// canonicalize each run of state writes, and drop writes that restate a
/// value already known to be in place before the target first runs.
pub fn reduce_trace(t: &Trace) -> Trace {
    let mut est = Some(Established::from_initial(&t.meta.initial));
    Trace {
        meta: t.meta.clone(),
        events: reduce_list(&t.events, &mut est),
    }
}
