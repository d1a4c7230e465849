use std::time::Instant;

use crate::wasm::{Instr, LoadOp, StoreOp};

use super::num;
use super::*;

fn trap<T>(kind: TrapKind) -> Result<T, Trap> {
    Err(Trap::new(kind))
}

/// Bounds check `[start, start + len)` against `size`.
#[inline]
fn in_bounds(start: u64, len: u64, size: usize) -> bool {
    start.checked_add(len).is_some_and(|e| e <= size as u64)
}

impl Store {
    /// Push a frame for `func`, whose arguments are already on the stack.
    pub(crate) fn push_frame(&mut self, func: FuncAddr) -> Result<(), Trap> {
        if self.frames.len() >= self.limits.max_call_depth {
            return trap(TrapKind::StackExhausted);
        }
        let (instance, code) = match &self.funcs[func].kind {
            FuncKind::Wasm { instance, code } => (*instance, code.clone()),
            FuncKind::Host { .. } => return Err(Trap::host("host function pushed as frame")),
        };
        let base = self.stack.len() - code.num_params;
        self.stack.extend(
            code.locals[code.num_params..]
                .iter()
                .map(|t| Value::default_for(*t)),
        );
        let id = self.next_frame_id();
        self.frames.push(Frame {
            func,
            instance,
            id,
            pc: 0,
            base,
            label_base: self.labels.len(),
        });
        Ok(())
    }

    fn pop_frame(&mut self) {
        let fr = self.frames.pop().expect("frame");
        let n = self.funcs[fr.func].ty.results.len();
        let len = self.stack.len();
        self.stack.drain(fr.base..len - n);
        self.labels.truncate(fr.label_base);
    }

    /// Perform a call from instance `cur`. Returns true if a wasm frame was
    /// pushed, false if the call already completed.
    fn call<E: Embedder + ?Sized>(
        &mut self,
        e: &mut E,
        addr: FuncAddr,
        cur: InstanceId,
    ) -> Result<bool, Trap> {
        let f = &self.funcs[addr];
        let n = f.ty.params.len();
        match f.kind {
            FuncKind::Host { id } => {
                let args = self.stack.split_off(self.stack.len() - n);
                let res = e.call_host(self, id, &args)?;
                self.stack.extend(res);
                Ok(false)
            }
            FuncKind::Wasm { instance, .. } if instance != cur => {
                let args = self.stack.split_off(self.stack.len() - n);
                let res = e.call_foreign(self, cur, addr, &args)?;
                self.stack.extend(res);
                Ok(false)
            }
            FuncKind::Wasm { .. } => {
                if f.watched {
                    let args = self.stack[self.stack.len() - n..].to_vec();
                    e.on_enter(self, addr, &args);
                }
                self.push_frame(addr)?;
                Ok(true)
            }
        }
    }

    /// Branch to relative label `depth`. Returns true if the branch leaves
    /// the function body.
    fn branch(&mut self, label_base: usize, depth: u32, pc: &mut usize) -> bool {
        let n = self.labels.len() - label_base;
        if depth as usize >= n {
            return true;
        }
        let idx = self.labels.len() - 1 - depth as usize;
        let l = self.labels[idx];
        let len = self.stack.len();
        self.stack.drain(l.height..len - l.arity);
        self.labels.truncate(if l.is_loop { idx + 1 } else { idx });
        *pc = l.cont;
        false
    }

    #[inline]
    fn pop(&mut self) -> Value {
        self.stack.pop().unwrap_or(Value::I32(0))
    }

    #[inline]
    fn pop_u32(&mut self) -> u32 {
        self.pop().i32() as u32
    }

    fn tick(&mut self) -> Result<(), Trap> {
        if self.fuel == 0 {
            return trap(TrapKind::OutOfFuel);
        }
        self.fuel -= 1;
        self.ticks = self.ticks.wrapping_add(1);
        if self.ticks & 0xFFFF == 0 {
            if let Some(d) = self.limits.deadline {
                if Instant::now() >= d {
                    return trap(TrapKind::Timeout);
                }
            }
        }
        Ok(())
    }

    /// Run until the frame stack is back to `depth` frames.
    pub(crate) fn run<E: Embedder + ?Sized>(&mut self, e: &mut E, depth: usize) -> Result<(), Trap> {
        'frames: loop {
            let fr = *self.frames.last().expect("frame");
            let code = match &self.funcs[fr.func].kind {
                FuncKind::Wasm { code, .. } => code.clone(),
                FuncKind::Host { .. } => unreachable!("host frame"),
            };
            let ii = fr.instance;
            let mut pc = fr.pc;
            loop {
                self.tick()?;
                match &code.instrs[pc] {
                    Instr::Unreachable => return trap(TrapKind::Unreachable),
                    Instr::Nop => pc += 1,
                    Instr::Block(_) | Instr::Loop(_) => {
                        let c = code.ctl[pc];
                        let is_loop = matches!(code.instrs[pc], Instr::Loop(_));
                        self.labels.push(Label {
                            arity: if is_loop { c.params } else { c.results } as usize,
                            height: self.stack.len() - c.params as usize,
                            cont: if is_loop { pc + 1 } else { c.end as usize + 1 },
                            is_loop,
                        });
                        pc += 1;
                    }
                    Instr::If(_) => {
                        let c = code.ctl[pc];
                        let cond = self.pop().i32();
                        let label = Label {
                            arity: c.results as usize,
                            height: self.stack.len() - c.params as usize,
                            cont: c.end as usize + 1,
                            is_loop: false,
                        };
                        if cond != 0 {
                            self.labels.push(label);
                            pc += 1;
                        } else if c.else_ != c.end {
                            self.labels.push(label);
                            pc = c.else_ as usize + 1;
                        } else {
                            pc = c.end as usize + 1;
                        }
                    }
                    Instr::Else => {
                        self.labels.pop();
                        pc = code.ctl[pc].end as usize + 1;
                    }
                    Instr::End => {
                        if self.labels.len() > fr.label_base {
                            self.labels.pop();
                            pc += 1;
                        } else {
                            self.pop_frame();
                            if self.frames.len() == depth {
                                return Ok(());
                            }
                            continue 'frames;
                        }
                    }
                    Instr::Br(l) => {
                        if self.branch(fr.label_base, *l, &mut pc) {
                            self.pop_frame();
                            if self.frames.len() == depth {
                                return Ok(());
                            }
                            continue 'frames;
                        }
                    }
                    Instr::BrIf(l) => {
                        if self.pop().i32() != 0 {
                            if self.branch(fr.label_base, *l, &mut pc) {
                                self.pop_frame();
                                if self.frames.len() == depth {
                                    return Ok(());
                                }
                                continue 'frames;
                            }
                        } else {
                            pc += 1;
                        }
                    }
                    Instr::BrTable(ls, d) => {
                        let i = self.pop_u32() as usize;
                        let l = ls.get(i).copied().unwrap_or(*d);
                        if self.branch(fr.label_base, l, &mut pc) {
                            self.pop_frame();
                            if self.frames.len() == depth {
                                return Ok(());
                            }
                            continue 'frames;
                        }
                    }
                    Instr::Return => {
                        self.pop_frame();
                        if self.frames.len() == depth {
                            return Ok(());
                        }
                        continue 'frames;
                    }
                    Instr::Call(f) => {
                        let addr = self.instances[ii].funcs[*f as usize];
                        self.frames.last_mut().unwrap().pc = pc + 1;
                        if self.call(e, addr, ii)? {
                            continue 'frames;
                        }
                        pc += 1;
                    }
                    Instr::CallIndirect { ty, table } => {
                        let i = self.pop_u32() as usize;
                        let t = &self.tables[self.instances[ii].tables[*table as usize]];
                        let addr = match t.elems.get(i) {
                            None => return trap(TrapKind::UndefinedElement),
                            Some(Value::FuncRef(Some(a))) => *a,
                            Some(_) => return trap(TrapKind::UninitializedElement),
                        };
                        if self.funcs[addr].ty != self.instances[ii].types[*ty as usize] {
                            return trap(TrapKind::IndirectCallTypeMismatch);
                        }
                        self.frames.last_mut().unwrap().pc = pc + 1;
                        if self.call(e, addr, ii)? {
                            continue 'frames;
                        }
                        pc += 1;
                    }
                    Instr::Drop => {
                        self.stack.pop();
                        pc += 1;
                    }
                    Instr::Select | Instr::SelectT(_) => {
                        let c = self.pop().i32();
                        let b = self.pop();
                        let a = self.pop();
                        self.stack.push(if c != 0 { a } else { b });
                        pc += 1;
                    }
                    Instr::LocalGet(i) => {
                        let v = self.stack[fr.base + *i as usize];
                        self.stack.push(v);
                        pc += 1;
                    }
                    Instr::LocalSet(i) => {
                        let v = self.pop();
                        self.stack[fr.base + *i as usize] = v;
                        pc += 1;
                    }
                    Instr::LocalTee(i) => {
                        let v = *self.stack.last().unwrap();
                        self.stack[fr.base + *i as usize] = v;
                        pc += 1;
                    }
                    Instr::GlobalGet(g) => {
                        let v = self.globals[self.instances[ii].globals[*g as usize]].value;
                        self.stack.push(v);
                        pc += 1;
                    }
                    Instr::GlobalSet(g) => {
                        let v = self.pop();
                        let a = self.instances[ii].globals[*g as usize];
                        self.globals[a].value = v;
                        pc += 1;
                    }
                    Instr::TableGet(t) => {
                        let i = self.pop_u32() as usize;
                        let tab = &self.tables[self.instances[ii].tables[*t as usize]];
                        match tab.elems.get(i) {
                            Some(v) => {
                                let v = *v;
                                self.stack.push(v)
                            }
                            None => return trap(TrapKind::TableOutOfBounds),
                        }
                        pc += 1;
                    }
                    Instr::TableSet(t) => {
                        let v = self.pop();
                        let i = self.pop_u32() as usize;
                        let a = self.instances[ii].tables[*t as usize];
                        match self.tables[a].elems.get_mut(i) {
                            Some(slot) => *slot = v,
                            None => return trap(TrapKind::TableOutOfBounds),
                        }
                        pc += 1;
                    }
                    Instr::Load(op, m) => {
                        let addr = self.pop_u32() as u64 + m.offset as u64;
                        let mem = &self.memories[self.instances[ii].memories[0]].data;
                        let v = load(mem, *op, addr)?;
                        self.stack.push(v);
                        pc += 1;
                    }
                    Instr::Store(op, m) => {
                        let v = self.pop();
                        let addr = self.pop_u32() as u64 + m.offset as u64;
                        let a = self.instances[ii].memories[0];
                        store(&mut self.memories[a].data, *op, addr, v)?;
                        pc += 1;
                    }
                    Instr::MemorySize(_) => {
                        let p = self.memories[self.instances[ii].memories[0]].pages();
                        self.stack.push(Value::I32(p as i32));
                        pc += 1;
                    }
                    Instr::MemoryGrow(_) => {
                        let n = self.pop_u32();
                        let a = self.instances[ii].memories[0];
                        let r = self.grow_memory(a, n);
                        self.stack.push(Value::I32(r));
                        pc += 1;
                    }
                    Instr::I32Const(v) => {
                        self.stack.push(Value::I32(*v));
                        pc += 1;
                    }
                    Instr::I64Const(v) => {
                        self.stack.push(Value::I64(*v));
                        pc += 1;
                    }
                    Instr::F32Const(v) => {
                        self.stack.push(Value::F32(*v));
                        pc += 1;
                    }
                    Instr::F64Const(v) => {
                        self.stack.push(Value::F64(*v));
                        pc += 1;
                    }
                    Instr::Num(op) => {
                        num::eval(*op, &mut self.stack).or_else(trap)?;
                        pc += 1;
                    }
                    Instr::RefNull(t) => {
                        self.stack.push(Value::default_for(*t));
                        pc += 1;
                    }
                    Instr::RefIsNull => {
                        let v = self.pop();
                        self.stack.push(Value::I32(v.is_null_ref() as i32));
                        pc += 1;
                    }
                    Instr::RefFunc(f) => {
                        let a = self.instances[ii].funcs[*f as usize];
                        self.stack.push(Value::FuncRef(Some(a)));
                        pc += 1;
                    }
                    Instr::MemoryInit { data, .. } => {
                        let n = self.pop_u32() as u64;
                        let s = self.pop_u32() as u64;
                        let d = self.pop_u32() as u64;
                        let seg = self.instances[ii].datas[*data as usize].clone();
                        let a = self.instances[ii].memories[0];
                        let mem = &mut self.memories[a].data;
                        if !in_bounds(s, n, seg.len()) || !in_bounds(d, n, mem.len()) {
                            return trap(TrapKind::MemoryOutOfBounds);
                        }
                        mem[d as usize..(d + n) as usize]
                            .copy_from_slice(&seg[s as usize..(s + n) as usize]);
                        pc += 1;
                    }
                    Instr::DataDrop(d) => {
                        self.instances[ii].datas[*d as usize] = Arc::new(Vec::new());
                        pc += 1;
                    }
                    Instr::MemoryCopy { .. } => {
                        let n = self.pop_u32() as u64;
                        let s = self.pop_u32() as u64;
                        let d = self.pop_u32() as u64;
                        let a = self.instances[ii].memories[0];
                        let mem = &mut self.memories[a].data;
                        if !in_bounds(s, n, mem.len()) || !in_bounds(d, n, mem.len()) {
                            return trap(TrapKind::MemoryOutOfBounds);
                        }
                        mem.copy_within(s as usize..(s + n) as usize, d as usize);
                        pc += 1;
                    }
                    Instr::MemoryFill(_) => {
                        let n = self.pop_u32() as u64;
                        let v = self.pop().i32() as u8;
                        let d = self.pop_u32() as u64;
                        let a = self.instances[ii].memories[0];
                        let mem = &mut self.memories[a].data;
                        if !in_bounds(d, n, mem.len()) {
                            return trap(TrapKind::MemoryOutOfBounds);
                        }
                        mem[d as usize..(d + n) as usize].fill(v);
                        pc += 1;
                    }
                    Instr::TableInit { elem, table } => {
                        let n = self.pop_u32() as u64;
                        let s = self.pop_u32() as u64;
                        let d = self.pop_u32() as u64;
                        let a = self.instances[ii].tables[*table as usize];
                        let seg = &self.instances[ii].elems[*elem as usize];
                        let tab = &mut self.tables[a].elems;
                        if !in_bounds(s, n, seg.len()) || !in_bounds(d, n, tab.len()) {
                            return trap(TrapKind::TableOutOfBounds);
                        }
                        tab[d as usize..(d + n) as usize]
                            .copy_from_slice(&seg[s as usize..(s + n) as usize]);
                        pc += 1;
                    }
                    Instr::ElemDrop(x) => {
                        self.instances[ii].elems[*x as usize].clear();
                        pc += 1;
                    }
                    Instr::TableCopy { dst, src } => {
                        let n = self.pop_u32() as u64;
                        let s = self.pop_u32() as u64;
                        let d = self.pop_u32() as u64;
                        let da = self.instances[ii].tables[*dst as usize];
                        let sa = self.instances[ii].tables[*src as usize];
                        if !in_bounds(s, n, self.tables[sa].elems.len())
                            || !in_bounds(d, n, self.tables[da].elems.len())
                        {
                            return trap(TrapKind::TableOutOfBounds);
                        }
                        let (s, d, n) = (s as usize, d as usize, n as usize);
                        if da == sa {
                            self.tables[da].elems.copy_within(s..s + n, d);
                        } else {
                            let items = self.tables[sa].elems[s..s + n].to_vec();
                            self.tables[da].elems[d..d + n].copy_from_slice(&items);
                        }
                        pc += 1;
                    }
                    Instr::TableGrow(t) => {
                        let n = self.pop_u32();
                        let init = self.pop();
                        let a = self.instances[ii].tables[*t as usize];
                        let r = self.grow_table(a, n, init);
                        self.stack.push(Value::I32(r));
                        pc += 1;
                    }
                    Instr::TableSize(t) => {
                        let a = self.instances[ii].tables[*t as usize];
                        let n = self.tables[a].elems.len();
                        self.stack.push(Value::I32(n as i32));
                        pc += 1;
                    }
                    Instr::TableFill(t) => {
                        let n = self.pop_u32() as u64;
                        let v = self.pop();
                        let d = self.pop_u32() as u64;
                        let a = self.instances[ii].tables[*t as usize];
                        let tab = &mut self.tables[a].elems;
                        if !in_bounds(d, n, tab.len()) {
                            return trap(TrapKind::TableOutOfBounds);
                        }
                        tab[d as usize..(d + n) as usize].fill(v);
                        pc += 1;
                    }
                }
            }
        }
    }

    /// `memory.grow` semantics: old page count, or -1 on failure.
    pub fn grow_memory(&mut self, mem: usize, delta: u32) -> i32 {
        let cap_pages = (self.limits.memory_bytes / PAGE_SIZE as u64).min(MAX_PAGES as u64);
        let m = &mut self.memories[mem];
        let old = m.pages();
        let max = m.limits.max.map_or(cap_pages, |x| (x as u64).min(cap_pages));
        let new = old as u64 + delta as u64;
        if new > max {
            return -1;
        }
        m.data.resize(new as usize * PAGE_SIZE, 0);
        old as i32
    }

    /// `table.grow` semantics: old size, or -1 on failure.
    pub fn grow_table(&mut self, table: usize, delta: u32, init: Value) -> i32 {
        let t = &mut self.tables[table];
        let old = t.elems.len() as u64;
        let max = t.ty.limits.max.unwrap_or(MAX_TABLE_SIZE).min(MAX_TABLE_SIZE) as u64;
        let new = old + delta as u64;
        if new > max {
            return -1;
        }
        t.elems.resize(new as usize, init);
        old as i32
    }
}

fn load(mem: &[u8], op: LoadOp, addr: u64) -> Result<Value, Trap> {
    use LoadOp::*;
    let size = match op {
        I32Load | F32Load | I64Load32S | I64Load32U => 4,
        I64Load | F64Load => 8,
        I32Load8S | I32Load8U | I64Load8S | I64Load8U => 1,
        I32Load16S | I32Load16U | I64Load16S | I64Load16U => 2,
    };
    if !in_bounds(addr, size, mem.len()) {
        return trap(TrapKind::MemoryOutOfBounds);
    }
    let a = addr as usize;
    let mut buf = [0u8; 8];
    buf[..size as usize].copy_from_slice(&mem[a..a + size as usize]);
    let raw = u64::from_le_bytes(buf);
    Ok(match op {
        I32Load => Value::I32(raw as u32 as i32),
        I64Load => Value::I64(raw as i64),
        F32Load => Value::F32(raw as u32),
        F64Load => Value::F64(raw),
        I32Load8S => Value::I32(raw as u8 as i8 as i32),
        I32Load8U => Value::I32(raw as u8 as i32),
        I32Load16S => Value::I32(raw as u16 as i16 as i32),
        I32Load16U => Value::I32(raw as u16 as i32),
        I64Load8S => Value::I64(raw as u8 as i8 as i64),
        I64Load8U => Value::I64(raw as u8 as i64),
        I64Load16S => Value::I64(raw as u16 as i16 as i64),
        I64Load16U => Value::I64(raw as u16 as i64),
        I64Load32S => Value::I64(raw as u32 as i32 as i64),
        I64Load32U => Value::I64(raw as u32 as i64),
    })
}

fn store(mem: &mut [u8], op: StoreOp, addr: u64, v: Value) -> Result<(), Trap> {
    use StoreOp::*;
    let (raw, size): (u64, u64) = match (op, v) {
        (I32Store, Value::I32(x)) => (x as u32 as u64, 4),
        (I64Store, Value::I64(x)) => (x as u64, 8),
        (F32Store, Value::F32(x)) => (x as u64, 4),
        (F64Store, Value::F64(x)) => (x, 8),
        (I32Store8, Value::I32(x)) => (x as u64, 1),
        (I32Store16, Value::I32(x)) => (x as u64, 2),
        (I64Store8, Value::I64(x)) => (x as u64, 1),
        (I64Store16, Value::I64(x)) => (x as u64, 2),
        (I64Store32, Value::I64(x)) => (x as u64, 4),
        _ => return Err(Trap::host("store operand type mismatch")),
    };
    if !in_bounds(addr, size, mem.len()) {
        return trap(TrapKind::MemoryOutOfBounds);
    }
    let a = addr as usize;
    mem[a..a + size as usize].copy_from_slice(&raw.to_le_bytes()[..size as usize]);
    Ok(())
}
