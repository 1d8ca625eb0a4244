//! The textual IR: data model, printer and parser.
//!
//! One instruction per line, `%n` temps, `Ln:` labels, `@name` globals and
//! functions. Immediates are 64-bit patterns printed as signed decimals.
use std::fmt::{self, Write};

use crate::lowering::{Init, Space};
use crate::target::Arch;
use crate::types::ScalarType;

use super::CodegenError;

/// Type of an IR value: an integer or a pointer to integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ty {
    Scalar(ScalarType),
    Ptr(ScalarType),
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Scalar(s) => write!(f, "{s}"),
            Ty::Ptr(s) => write!(f, "{s}*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Temp(u32),
    Imm(u64),
    /// Address of a global.
    Global(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Temp(t) => write!(f, "%{t}"),
            Operand::Imm(v) => write!(f, "{}", *v as i64),
            Operand::Global(g) => write!(f, "@{g}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl BinOp {
    pub const ALL: [BinOp; 10] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpPred {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpPred {
    pub const ALL: [CmpPred; 6] = [
        CmpPred::Eq,
        CmpPred::Ne,
        CmpPred::Lt,
        CmpPred::Le,
        CmpPred::Gt,
        CmpPred::Ge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Lt => "lt",
            CmpPred::Le => "le",
            CmpPred::Gt => "gt",
            CmpPred::Ge => "ge",
        }
    }
}

/// A kernel argument passed by `tgt_target`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TgtArg {
    /// Host buffer mapped tofrom.
    Buffer {
        elem: ScalarType,
        ptr: Operand,
        len: u32,
    },
    Value {
        ty: ScalarType,
        value: Operand,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Inst {
    /// Frame-local memory; always placed at function entry.
    Local {
        dst: u32,
        ty: ScalarType,
        count: Option<u32>,
    },
    Load {
        dst: u32,
        ty: ScalarType,
        ptr: Operand,
    },
    Store {
        ty: ScalarType,
        ptr: Operand,
        value: Operand,
    },
    /// `ptr + index * sizeof(ty)`
    Gep {
        dst: u32,
        ty: ScalarType,
        ptr: Operand,
        index: Operand,
    },
    Bin {
        dst: u32,
        op: BinOp,
        ty: ScalarType,
        lhs: Operand,
        rhs: Operand,
    },
    /// Compares in `ty`; the result is an `i32` 0 or 1.
    Cmp {
        dst: u32,
        pred: CmpPred,
        ty: ScalarType,
        lhs: Operand,
        rhs: Operand,
    },
    Conv {
        dst: u32,
        from: ScalarType,
        to: ScalarType,
        value: Operand,
    },
    Label(u32),
    Br(u32),
    CondBr {
        cond: Operand,
        then_label: u32,
        else_label: u32,
    },
    Call {
        dst: Option<u32>,
        ret: Option<ScalarType>,
        callee: String,
        args: Vec<(Ty, Operand)>,
    },
    Ret(Option<(ScalarType, Operand)>),
    /// A target instruction from the intrinsic table (or a host builtin).
    Intrinsic {
        dst: Option<u32>,
        name: String,
        ty: Option<ScalarType>,
        args: Vec<Operand>,
    },
    /// Host-side offload of target region `region`; yields a status.
    TgtTarget {
        dst: u32,
        region: u32,
        teams: Operand,
        threads: Operand,
        args: Vec<TgtArg>,
    },
}

impl Inst {
    pub fn dst(&self) -> Option<u32> {
        match self {
            Inst::Local { dst, .. }
            | Inst::Load { dst, .. }
            | Inst::Gep { dst, .. }
            | Inst::Bin { dst, .. }
            | Inst::Cmp { dst, .. }
            | Inst::Conv { dst, .. }
            | Inst::TgtTarget { dst, .. } => Some(*dst),
            Inst::Call { dst, .. } | Inst::Intrinsic { dst, .. } => *dst,
            _ => None,
        }
    }

    pub fn dst_mut(&mut self) -> Option<&mut u32> {
        match self {
            Inst::Local { dst, .. }
            | Inst::Load { dst, .. }
            | Inst::Gep { dst, .. }
            | Inst::Bin { dst, .. }
            | Inst::Cmp { dst, .. }
            | Inst::Conv { dst, .. }
            | Inst::TgtTarget { dst, .. } => Some(dst),
            Inst::Call { dst, .. } | Inst::Intrinsic { dst, .. } => dst.as_mut(),
            _ => None,
        }
    }

    /// Every operand read by the instruction.
    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            Inst::Local { .. } | Inst::Label(_) | Inst::Br(_) => vec![],
            Inst::Load { ptr, .. } => vec![ptr],
            Inst::Store { ptr, value, .. } => vec![ptr, value],
            Inst::Gep { ptr, index, .. } => vec![ptr, index],
            Inst::Bin { lhs, rhs, .. } | Inst::Cmp { lhs, rhs, .. } => vec![lhs, rhs],
            Inst::Conv { value, .. } => vec![value],
            Inst::CondBr { cond, .. } => vec![cond],
            Inst::Call { args, .. } => args.iter_mut().map(|(_, a)| a).collect(),
            Inst::Ret(v) => v.iter_mut().map(|(_, o)| o).collect(),
            Inst::Intrinsic { args, .. } => args.iter_mut().collect(),
            Inst::TgtTarget {
                teams,
                threads,
                args,
                ..
            } => {
                let mut out = vec![teams, threads];
                for a in args {
                    out.push(match a {
                        TgtArg::Buffer { ptr, .. } => ptr,
                        TgtArg::Value { value, .. } => value,
                    });
                }
                out
            }
        }
    }

    pub fn operands(&self) -> Vec<Operand> {
        self.clone().operands_mut().into_iter().map(|o| o.clone()).collect()
    }

    pub fn labels_mut(&mut self) -> Vec<&mut u32> {
        match self {
            Inst::Label(l) | Inst::Br(l) => vec![l],
            Inst::CondBr {
                then_label,
                else_label,
                ..
            } => vec![then_label, else_label],
            _ => vec![],
        }
    }

    pub fn is_terminator(&self) -> bool {
        matches!(self, Inst::Br(_) | Inst::CondBr { .. } | Inst::Ret(_))
    }
}

fn args_text(args: &[Operand]) -> String {
    args.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for Inst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inst::Local { dst, ty, count } => {
                write!(f, "%{dst} = local {ty}")?;
                if let Some(n) = count {
                    write!(f, " x {n}")?;
                }
                Ok(())
            }
            Inst::Load { dst, ty, ptr } => write!(f, "%{dst} = load {ty} {ptr}"),
            Inst::Store { ty, ptr, value } => write!(f, "store {ty} {ptr}, {value}"),
            Inst::Gep {
                dst,
                ty,
                ptr,
                index,
            } => write!(f, "%{dst} = gep {ty} {ptr}, {index}"),
            Inst::Bin {
                dst,
                op,
                ty,
                lhs,
                rhs,
            } => write!(f, "%{dst} = {} {ty} {lhs}, {rhs}", op.name()),
            Inst::Cmp {
                dst,
                pred,
                ty,
                lhs,
                rhs,
            } => write!(f, "%{dst} = cmp.{} {ty} {lhs}, {rhs}", pred.name()),
            Inst::Conv {
                dst,
                from,
                to,
                value,
            } => write!(f, "%{dst} = conv {from} {to} {value}"),
            Inst::Label(l) => write!(f, "L{l}:"),
            Inst::Br(l) => write!(f, "br L{l}"),
            Inst::CondBr {
                cond,
                then_label,
                else_label,
            } => write!(f, "condbr {cond}, L{then_label}, L{else_label}"),
            Inst::Call {
                dst,
                ret,
                callee,
                args,
            } => {
                if let Some(d) = dst {
                    write!(f, "%{d} = ")?;
                }
                let ret = ret.map_or("void".to_string(), |t| t.to_string());
                let args: Vec<String> = args.iter().map(|(t, a)| format!("{t} {a}")).collect();
                write!(f, "call {ret} @{callee}({})", args.join(", "))
            }
            Inst::Ret(None) => write!(f, "ret"),
            Inst::Ret(Some((ty, v))) => write!(f, "ret {ty} {v}"),
            Inst::Intrinsic {
                dst,
                name,
                ty,
                args,
            } => {
                if let Some(d) = dst {
                    write!(f, "%{d} = ")?;
                }
                f.write_str(name)?;
                if let Some(t) = ty {
                    write!(f, " {t}")?;
                }
                if !args.is_empty() {
                    write!(f, " {}", args_text(args))?;
                }
                Ok(())
            }
            Inst::TgtTarget {
                dst,
                region,
                teams,
                threads,
                args,
            } => {
                let args: Vec<String> = args
                    .iter()
                    .map(|a| match a {
                        TgtArg::Buffer { elem, ptr, len } => format!("buf {elem} {ptr} x {len}"),
                        TgtArg::Value { ty, value } => format!("val {ty} {value}"),
                    })
                    .collect();
                write!(
                    f,
                    "%{dst} = tgt_target {region} {teams}, {threads} ({})",
                    args.join(", ")
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IrGlobal {
    pub name: String,
    pub ty: ScalarType,
    pub count: u32,
    pub space: Space,
    pub init: Init,
}

impl IrGlobal {
    pub fn size_bytes(&self) -> usize {
        self.ty.size() * self.count as usize
    }
}

impl fmt::Display for IrGlobal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "global @{} {} x {} {} ",
            self.name,
            self.ty,
            self.count,
            self.space.name()
        )?;
        match self.init {
            Init::Zero => write!(f, "zero"),
            Init::None => write!(f, "uninit"),
            Init::Explicit(v) => write!(f, "init {v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IrFunction {
    pub name: String,
    /// Parameter `i` is temp `%i`.
    pub params: Vec<Ty>,
    pub ret: Option<ScalarType>,
    pub body: Vec<Inst>,
}

impl IrFunction {
    /// Names of all functions this one calls, in first-call order.
    pub fn callees(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for inst in &self.body {
            if let Inst::Call { callee, .. } = inst {
                if !out.contains(&callee.as_str()) {
                    out.push(callee);
                }
            }
        }
        out
    }

    /// Names of all globals this function takes the address of.
    pub fn global_refs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for inst in &self.body {
            for op in inst.operands() {
                if let Operand::Global(g) = op {
                    if !out.contains(&g) {
                        out.push(g);
                    }
                }
            }
        }
        out
    }

    pub fn count_intrinsic(&self, name: &str) -> usize {
        self.body
            .iter()
            .filter(|i| matches!(i, Inst::Intrinsic { name: n, .. } if n == name))
            .count()
    }
}

impl fmt::Display for IrFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<String> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t} %{i}"))
            .collect();
        let ret = self.ret.map_or("void".to_string(), |t| t.to_string());
        writeln!(f, "func @{}({}) -> {ret} {{", self.name, params.join(", "))?;
        for inst in &self.body {
            match inst {
                Inst::Label(_) => writeln!(f, "{inst}")?,
                _ => writeln!(f, "  {inst}")?,
            }
        }
        write!(f, "}}")
    }
}

/// A module of IR for one target.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IrModule {
    pub target: Arch,
    /// `!`-prefixed annotation lines; ignored by normalization.
    pub metadata: Vec<String>,
    pub globals: Vec<IrGlobal>,
    pub functions: Vec<IrFunction>,
}

impl IrModule {
    pub fn new(target: Arch) -> Self {
        Self {
            target,
            metadata: Vec::new(),
            globals: Vec::new(),
            functions: Vec::new(),
        }
    }

    pub fn function(&self, name: &str) -> Option<&IrFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&IrGlobal> {
        self.globals.iter().find(|g| g.name == name)
    }

    /// Number of `name` instructions across all functions.
    pub fn count_intrinsic(&self, name: &str) -> usize {
        self.functions.iter().map(|f| f.count_intrinsic(name)).sum()
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self, CodegenError> {
        parse_module(text)
    }
}

impl fmt::Display for IrModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "target {}", self.target)?;
        for m in &self.metadata {
            writeln!(f, "!{m}")?;
        }
        for g in &self.globals {
            writeln!(f, "{g}")?;
        }
        for func in &self.functions {
            writeln!(f)?;
            writeln!(f, "{func}")?;
        }
        Ok(())
    }
}

// ------------------------------------------------------------------ parser

struct Line<'a> {
    no: usize,
    toks: Vec<&'a str>,
    pos: usize,
}

fn split_tokens(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        let sep = c.is_whitespace() || matches!(c, '(' | ')' | ',' | '{' | '}');
        if sep {
            if let Some(s) = start.take() {
                out.push(&line[s..i]);
            }
            if !c.is_whitespace() {
                out.push(&line[i..i + 1]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&line[s..]);
    }
    out
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl Into<String>) -> CodegenError {
        CodegenError::IrParse {
            line: self.no,
            message: msg.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str, CodegenError> {
        let t = self
            .toks
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err("unexpected end of line"))?;
        self.pos += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).copied()
    }

    fn eat(&mut self, t: &str) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &str) -> Result<(), CodegenError> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{t}`")))
        }
    }

    fn done(&self) -> Result<(), CodegenError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected `{t}`"))),
        }
    }

    fn scalar(&mut self) -> Result<ScalarType, CodegenError> {
        let t = self.next()?;
        t.parse().map_err(|_| self.err(format!("expected a type, found `{t}`")))
    }

    fn ty(&mut self) -> Result<Ty, CodegenError> {
        let t = self.next()?;
        let (base, ptr) = match t.strip_suffix('*') {
            Some(b) => (b, true),
            None => (t, false),
        };
        let s: ScalarType = base
            .parse()
            .map_err(|_| self.err(format!("expected a type, found `{t}`")))?;
        Ok(if ptr { Ty::Ptr(s) } else { Ty::Scalar(s) })
    }

    fn temp(&mut self) -> Result<u32, CodegenError> {
        let t = self.next()?;
        t.strip_prefix('%')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| self.err(format!("expected a temp, found `{t}`")))
    }

    fn label(&mut self) -> Result<u32, CodegenError> {
        let t = self.next()?;
        t.strip_prefix('L')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| self.err(format!("expected a label, found `{t}`")))
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<T, CodegenError> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| self.err(format!("expected a number, found `{t}`")))
    }

    fn operand(&mut self) -> Result<Operand, CodegenError> {
        let t = self.next()?;
        if let Some(n) = t.strip_prefix('%') {
            return n
                .parse()
                .map(Operand::Temp)
                .map_err(|_| self.err(format!("bad temp `{t}`")));
        }
        if let Some(g) = t.strip_prefix('@') {
            return Ok(Operand::Global(g.to_string()));
        }
        t.parse::<i64>()
            .map(|v| Operand::Imm(v as u64))
            .map_err(|_| self.err(format!("expected an operand, found `{t}`")))
    }

    fn symbol(&mut self) -> Result<String, CodegenError> {
        let t = self.next()?;
        t.strip_prefix('@')
            .map(str::to_string)
            .ok_or_else(|| self.err(format!("expected `@name`, found `{t}`")))
    }

    /// Comma-separated operands up to the end of the line.
    fn operand_list(&mut self) -> Result<Vec<Operand>, CodegenError> {
        let mut out = Vec::new();
        if self.peek().is_none() {
            return Ok(out);
        }
        loop {
            out.push(self.operand()?);
            if !self.eat(",") {
                return Ok(out);
            }
        }
    }
}

fn parse_global(line: &mut Line) -> Result<IrGlobal, CodegenError> {
    let name = line.symbol()?;
    let ty = line.scalar()?;
    line.expect("x")?;
    let count = line.number()?;
    let space = match line.next()? {
        "global" => Space::Global,
        "team_shared" => Space::TeamShared,
        other => return Err(line.err(format!("unknown memory space `{other}`"))),
    };
    let init = match line.next()? {
        "zero" => Init::Zero,
        "uninit" => Init::None,
        "init" => Init::Explicit(line.number()?),
        other => return Err(line.err(format!("unknown initializer `{other}`"))),
    };
    line.done()?;
    Ok(IrGlobal {
        name,
        ty,
        count,
        space,
        init,
    })
}

fn parse_header(line: &mut Line) -> Result<IrFunction, CodegenError> {
    let name = line.symbol()?;
    line.expect("(")?;
    let mut params = Vec::new();
    while !line.eat(")") {
        params.push(line.ty()?);
        let t = line.temp()?;
        if t as usize != params.len() - 1 {
            return Err(line.err("parameters must be numbered %0, %1, ..."));
        }
        if !line.eat(",") {
            line.expect(")")?;
            break;
        }
    }
    line.expect("->")?;
    let ret = match line.next()? {
        "void" => None,
        t => Some(
            t.parse()
                .map_err(|_| line.err(format!("bad return type `{t}`")))?,
        ),
    };
    line.expect("{")?;
    line.done()?;
    Ok(IrFunction {
        name,
        params,
        ret,
        body: Vec::new(),
    })
}

fn parse_inst(line: &mut Line) -> Result<Inst, CodegenError> {
    let first = line.peek().ok_or_else(|| line.err("empty instruction"))?;
    if let Some(l) = first.strip_suffix(':') {
        let l = l
            .strip_prefix('L')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| line.err(format!("bad label `{first}`")))?;
        line.pos += 1;
        line.done()?;
        return Ok(Inst::Label(l));
    }
    let dst = if first.starts_with('%') {
        let d = line.temp()?;
        line.expect("=")?;
        Some(d)
    } else {
        None
    };
    let need = |line: &Line| dst.ok_or_else(|| line.err("instruction needs a destination"));
    let op = line.next()?;
    let inst = match op {
        "local" => {
            let ty = line.scalar()?;
            let count = if line.eat("x") {
                Some(line.number()?)
            } else {
                None
            };
            Inst::Local {
                dst: need(line)?,
                ty,
                count,
            }
        }
        "load" => Inst::Load {
            dst: need(line)?,
            ty: line.scalar()?,
            ptr: line.operand()?,
        },
        "store" => {
            let ty = line.scalar()?;
            let ptr = line.operand()?;
            line.expect(",")?;
            Inst::Store {
                ty,
                ptr,
                value: line.operand()?,
            }
        }
        "gep" => {
            let ty = line.scalar()?;
            let ptr = line.operand()?;
            line.expect(",")?;
            Inst::Gep {
                dst: need(line)?,
                ty,
                ptr,
                index: line.operand()?,
            }
        }
        "conv" => Inst::Conv {
            dst: need(line)?,
            from: line.scalar()?,
            to: line.scalar()?,
            value: line.operand()?,
        },
        "br" => Inst::Br(line.label()?),
        "condbr" => {
            let cond = line.operand()?;
            line.expect(",")?;
            let then_label = line.label()?;
            line.expect(",")?;
            Inst::CondBr {
                cond,
                then_label,
                else_label: line.label()?,
            }
        }
        "call" => {
            let ret = match line.next()? {
                "void" => None,
                t => Some(
                    t.parse()
                        .map_err(|_| line.err(format!("bad return type `{t}`")))?,
                ),
            };
            let callee = line.symbol()?;
            line.expect("(")?;
            let mut args = Vec::new();
            while !line.eat(")") {
                let ty = line.ty()?;
                args.push((ty, line.operand()?));
                if !line.eat(",") {
                    line.expect(")")?;
                    break;
                }
            }
            Inst::Call {
                dst,
                ret,
                callee,
                args,
            }
        }
        "ret" => {
            if line.peek().is_none() {
                Inst::Ret(None)
            } else {
                let ty = line.scalar()?;
                Inst::Ret(Some((ty, line.operand()?)))
            }
        }
        "tgt_target" => {
            let region = line.number()?;
            let teams = line.operand()?;
            line.expect(",")?;
            let threads = line.operand()?;
            line.expect("(")?;
            let mut args = Vec::new();
            while !line.eat(")") {
                match line.next()? {
                    "buf" => {
                        let elem = line.scalar()?;
                        let ptr = line.operand()?;
                        line.expect("x")?;
                        args.push(TgtArg::Buffer {
                            elem,
                            ptr,
                            len: line.number()?,
                        });
                    }
                    "val" => {
                        let ty = line.scalar()?;
                        args.push(TgtArg::Value {
                            ty,
                            value: line.operand()?,
                        });
                    }
                    other => return Err(line.err(format!("bad offload argument `{other}`"))),
                }
                if !line.eat(",") {
                    line.expect(")")?;
                    break;
                }
            }
            Inst::TgtTarget {
                dst: need(line)?,
                region,
                teams,
                threads,
                args,
            }
        }
        _ => {
            if let Some(pred) = op.strip_prefix("cmp.") {
                let pred = CmpPred::ALL
                    .into_iter()
                    .find(|p| p.name() == pred)
                    .ok_or_else(|| line.err(format!("unknown comparison `{op}`")))?;
                let ty = line.scalar()?;
                let lhs = line.operand()?;
                line.expect(",")?;
                Inst::Cmp {
                    dst: need(line)?,
                    pred,
                    ty,
                    lhs,
                    rhs: line.operand()?,
                }
            } else if let Some(bop) = BinOp::ALL.into_iter().find(|b| b.name() == op) {
                let ty = line.scalar()?;
                let lhs = line.operand()?;
                line.expect(",")?;
                Inst::Bin {
                    dst: need(line)?,
                    op: bop,
                    ty,
                    lhs,
                    rhs: line.operand()?,
                }
            } else {
                let name = op.to_string();
                let ty = match line.peek() {
                    Some(t) if t.parse::<ScalarType>().is_ok() => Some(line.scalar()?),
                    _ => None,
                };
                Inst::Intrinsic {
                    dst,
                    name,
                    ty,
                    args: line.operand_list()?,
                }
            }
        }
    };
    line.done()?;
    Ok(inst)
}

pub fn parse_module(text: &str) -> Result<IrModule, CodegenError> {
    let mut module: Option<IrModule> = None;
    let mut current: Option<IrFunction> = None;
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let content = match raw.find(';') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut line = Line {
            no,
            toks: split_tokens(trimmed),
            pos: 0,
        };
        if let Some(m) = trimmed.strip_prefix('!') {
            let module = module.as_mut().ok_or_else(|| line.err("missing `target` line"))?;
            module.metadata.push(m.to_string());
            continue;
        }
        let Some(m) = module.as_mut() else {
            if line.next()? != "target" {
                return Err(line.err("module must start with `target <arch>`"));
            }
            let arch = line.next()?;
            let arch = arch.parse::<Arch>().map_err(|e| line.err(e))?;
            line.done()?;
            module = Some(IrModule::new(arch));
            continue;
        };
        if let Some(func) = current.as_mut() {
            if trimmed == "}" {
                m.functions.push(current.take().expect("open function"));
                continue;
            }
            func.body.push(parse_inst(&mut line)?);
            continue;
        }
        match line.next()? {
            "global" => m.globals.push(parse_global(&mut line)?),
            "func" => current = Some(parse_header(&mut line)?),
            other => return Err(line.err(format!("unexpected `{other}`"))),
        }
    }
    if current.is_some() {
        return Err(CodegenError::IrParse {
            line: text.lines().count(),
            message: "unterminated function".into(),
        });
    }
    module.ok_or(CodegenError::IrParse {
        line: 1,
        message: "empty IR module".into(),
    })
}

/// Renders a function list with one instruction per line; used by tests.
pub fn listing(f: &IrFunction) -> String {
    let mut s = String::new();
    for inst in &f.body {
        writeln!(s, "{inst}").unwrap();
    }
    s
}
