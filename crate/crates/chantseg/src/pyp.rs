//! Pitman-Yor restaurant bookkeeping and hierarchical context trees.
//!
//! Counts follow the Chinese restaurant franchise: every customer sits at
//! a table, every table serves one dish, and creating a table sends one
//! proxy customer for the same dish to the parent context. Tables are
//! tracked individually (not as count histograms) so a customer can be
//! removed exactly via the trace returned when it was added; blocked
//! Gibbs sweeps rely on that inverse.
//!
//! A tree may be `variable_order`, in which case each node also counts
//! how many customers stopped at it versus passed through to a deeper
//! context; those counts define the context-length distribution used by
//! the tone model.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

/// Dish or context symbol: a dense id assigned by the caller.
pub type Sym = u32;

/// Identifier of one table, unique within its tree.
pub type TableId = u64;

/// Per-depth discount and concentration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthParams {
    pub d: f64,
    pub theta: f64,
}

/// Initial values and prior parameters for the per-depth resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PypHyperParams {
    pub d_init: f64,
    pub theta_init: f64,
    /// Beta prior on each discount.
    pub d_prior_a: f64,
    pub d_prior_b: f64,
    /// Gamma prior (shape, rate) on each concentration.
    pub theta_prior_shape: f64,
    pub theta_prior_rate: f64,
}

impl Default for PypHyperParams {
    fn default() -> Self {
        PypHyperParams {
            d_init: 0.5,
            theta_init: 2.0,
            d_prior_a: 1.0,
            d_prior_b: 1.0,
            theta_prior_shape: 1.0,
            theta_prior_rate: 1.0,
        }
    }
}

// --- Restaurant --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Table {
    id: TableId,
    customers: u32,
    /// Table at the parent node seated by this table's creation proxy.
    parent_table: Option<TableId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct DishSection {
    /// c(s|h): customers across all tables serving this dish.
    customers: u64,
    /// Customers seated here directly, as opposed to proxies from below.
    direct: u64,
    tables: Vec<Table>,
}

/// Seating decision for one customer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SeatDecision {
    Join(TableId),
    NewTable,
}

/// One context's seating state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Restaurant {
    dishes: BTreeMap<Sym, DishSection>,
    /// c(h): all customers.
    customers: u64,
    /// t_h: all tables.
    tables: u64,
    next_table: TableId,
}

impl Restaurant {
    /// One level of the predictive rule: discounted dish counts plus the
    /// table-weighted back-off onto the parent probability.
    fn predictive(&self, dish: Option<Sym>, params: DepthParams, parent_prob: f64) -> f64 {
        if self.customers == 0 {
            return parent_prob;
        }
        let (cs, ts) = dish
            .and_then(|s| self.dishes.get(&s))
            .map(|s| (s.customers as f64, s.tables.len() as f64))
            .unwrap_or((0.0, 0.0));
        let c = self.customers as f64;
        let t = self.tables as f64;
        (cs - params.d * ts + (params.theta + params.d * t) * parent_prob) / (params.theta + c)
    }

    /// Chooses a table by inverse CDF over the unnormalized seating
    /// weights, with a single uniform draw.
    fn decide_seat(
        &self,
        dish: Sym,
        params: DepthParams,
        parent_prob: f64,
        rng: &mut impl Rng,
    ) -> SeatDecision {
        let section = self.dishes.get(&dish);
        let existing: f64 = section
            .map(|s| s.customers as f64 - params.d * s.tables.len() as f64)
            .unwrap_or(0.0);
        let new_weight = (params.theta + params.d * self.tables as f64) * parent_prob;
        let total = existing + new_weight;
        if !(total > 0.0) {
            return SeatDecision::NewTable;
        }
        let mut u = rng.gen::<f64>() * total;
        if let Some(s) = section {
            for table in &s.tables {
                let w = table.customers as f64 - params.d;
                if u < w {
                    return SeatDecision::Join(table.id);
                }
                u -= w;
            }
        }
        SeatDecision::NewTable
    }

    /// Seats one customer per an already-made decision. Returns the table
    /// id and whether the table is new.
    fn apply_seat(
        &mut self,
        dish: Sym,
        decision: SeatDecision,
        parent_link: Option<TableId>,
        direct: bool,
    ) -> (TableId, bool) {
        let section = self.dishes.entry(dish).or_default();
        section.customers += 1;
        if direct {
            section.direct += 1;
        }
        self.customers += 1;
        match decision {
            SeatDecision::Join(id) => {
                section
                    .tables
                    .iter_mut()
                    .find(|t| t.id == id)
                    .expect("seating decision references a live table")
                    .customers += 1;
                (id, false)
            }
            SeatDecision::NewTable => {
                let id = self.next_table;
                self.next_table += 1;
                section.tables.push(Table {
                    id,
                    customers: 1,
                    parent_table: parent_link,
                });
                self.tables += 1;
                (id, true)
            }
        }
    }

    /// Removes one customer from the given table. When the table empties
    /// it is deleted and `(its id, its parent link)` is returned so the
    /// caller can withdraw the proxy customer upstream.
    fn unseat(
        &mut self,
        dish: Sym,
        table: TableId,
        direct: bool,
    ) -> Result<Option<(TableId, Option<TableId>)>> {
        let stale = || Error::StaleTrace { table };
        let section = self.dishes.get_mut(&dish).ok_or_else(stale)?;
        let idx = section
            .tables
            .iter()
            .position(|t| t.id == table)
            .ok_or_else(stale)?;
        section.tables[idx].customers -= 1;
        section.customers = section.customers.checked_sub(1).ok_or_else(stale)?;
        if direct {
            section.direct = section.direct.checked_sub(1).ok_or_else(stale)?;
        }
        self.customers = self.customers.checked_sub(1).ok_or_else(stale)?;
        let removed = if section.tables[idx].customers == 0 {
            let t = section.tables.remove(idx);
            self.tables -= 1;
            Some((t.id, t.parent_table))
        } else {
            None
        };
        if section.customers == 0 {
            debug_assert!(section.tables.is_empty());
            self.dishes.remove(&dish);
        }
        Ok(removed)
    }

    pub fn customers(&self) -> u64 {
        self.customers
    }

    pub fn tables(&self) -> u64 {
        self.tables
    }

    /// (customers, tables) for one dish.
    pub fn dish_counts(&self, dish: Sym) -> (u64, usize) {
        self.dishes
            .get(&dish)
            .map(|s| (s.customers, s.tables.len()))
            .unwrap_or((0, 0))
    }

    fn hash_statistics<H: Hasher>(&self, state: &mut H) {
        self.customers.hash(state);
        self.tables.hash(state);
        for (dish, section) in &self.dishes {
            dish.hash(state);
            section.customers.hash(state);
            section.direct.hash(state);
            section.tables.len().hash(state);
            for table in &section.tables {
                table.customers.hash(state);
            }
        }
    }
}

// --- Context tree ------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Node {
    restaurant: Restaurant,
    children: BTreeMap<Sym, Node>,
    /// Customers whose sampled context ends at this node.
    stops: u64,
    /// Customers that continued to a deeper context through this node.
    passes: u64,
}

impl Node {
    fn prunable(&self) -> bool {
        self.restaurant.customers == 0
            && self.stops == 0
            && self.passes == 0
            && self.children.is_empty()
    }
}

/// Proof of one added customer, sufficient for exact removal.
///
/// `ctx` is the (already truncated) context the customer was added under,
/// most recent symbol last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub ctx: Vec<Sym>,
    pub dish: Sym,
    table: TableId,
}

/// Side effects of an add relevant to callers layering extra state on
/// root tables.
#[derive(Debug, Clone, Copy)]
pub struct AddOutcome {
    /// Set when the add created a new table at the root restaurant.
    pub created_root_table: Option<TableId>,
}

/// Side effects of a removal, mirror of [`AddOutcome`].
#[derive(Debug, Clone, Copy)]
pub struct RemoveOutcome {
    pub removed_root_table: Option<TableId>,
}

/// A suffix-tree of restaurants: the root holds the empty context and
/// each child extends its parent's context by one older symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTree {
    root: Node,
    depth_params: Vec<DepthParams>,
    max_depth: usize,
    variable_order: bool,
    hyper: PypHyperParams,
}

impl ContextTree {
    pub fn new(max_depth: usize, variable_order: bool, hyper: PypHyperParams) -> Self {
        let params = DepthParams {
            d: hyper.d_init,
            theta: hyper.theta_init,
        };
        ContextTree {
            root: Node::default(),
            depth_params: vec![params; max_depth + 1],
            max_depth,
            variable_order,
            hyper,
        }
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn depth_params(&self) -> &[DepthParams] {
        &self.depth_params
    }

    /// Test and oracle hook: pin the parameters of one depth.
    pub fn set_depth_params(&mut self, depth: usize, params: DepthParams) {
        self.depth_params[depth] = params;
    }

    pub fn is_empty(&self) -> bool {
        self.root.prunable()
    }

    /// Truncates a context to the suffix this tree can represent.
    pub fn truncate<'a>(&self, ctx: &'a [Sym]) -> &'a [Sym] {
        let keep = ctx.len().min(self.max_depth);
        &ctx[ctx.len() - keep..]
    }

    /// Predictive probability of `dish` at every context length
    /// `0..=len(ctx)`: entry `k` conditions on the last `k` symbols.
    /// `dish = None` scores a dish with no counts anywhere (pure
    /// back-off), which is how never-registered dishes are evaluated.
    pub fn predictive_path(&self, ctx: &[Sym], dish: Option<Sym>, base: f64) -> Vec<f64> {
        let ctx = self.truncate(ctx);
        let len = ctx.len();
        let mut probs = Vec::with_capacity(len + 1);
        let mut node = Some(&self.root);
        let mut prev = base;
        for depth in 0..=len {
            if depth > 0 {
                node = node.and_then(|n| n.children.get(&ctx[len - depth]));
            }
            let p = match node {
                Some(n) => n.restaurant.predictive(dish, self.depth_params[depth], prev),
                None => prev,
            };
            probs.push(p);
            prev = p;
        }
        probs
    }

    /// Predictive probability under the deepest available context.
    pub fn predictive_prob(&self, ctx: &[Sym], dish: Option<Sym>, base: f64) -> f64 {
        *self
            .predictive_path(ctx, dish, base)
            .last()
            .expect("path has at least the root entry")
    }

    /// Distribution over context lengths `0..=len(ctx)` from the stop and
    /// pass counts along the path, Beta(1,1)-smoothed, with the residual
    /// mass of longer contexts assigned to the deepest entry.
    pub fn depth_distribution(&self, ctx: &[Sym]) -> Vec<f64> {
        debug_assert!(self.variable_order);
        let ctx = self.truncate(ctx);
        let len = ctx.len();
        let mut out = Vec::with_capacity(len + 1);
        let mut node = Some(&self.root);
        let mut remaining = 1.0f64;
        for depth in 0..=len {
            if depth > 0 {
                node = node.and_then(|n| n.children.get(&ctx[len - depth]));
            }
            if depth == len {
                out.push(remaining);
                break;
            }
            let q = match node {
                Some(n) => (n.stops as f64 + 1.0) / ((n.stops + n.passes) as f64 + 2.0),
                None => 0.5,
            };
            out.push(remaining * q);
            remaining *= 1.0 - q;
        }
        out
    }

    /// Adds one customer for `dish` under `ctx` (pre-truncated by the
    /// caller; its full length is the seating depth). New tables cascade
    /// proxy customers toward the root, per the franchise rule.
    pub fn add_customer(
        &mut self,
        ctx: &[Sym],
        dish: Sym,
        base: f64,
        rng: &mut impl Rng,
    ) -> (Trace, AddOutcome) {
        let ctx: Vec<Sym> = self.truncate(ctx).to_vec();
        let target = ctx.len();

        // Decide the whole seating cascade against frozen counts. Each
        // level's decision only matters if the level below opened a new
        // table, and no level's weights are affected by deeper seatings,
        // so deciding first and applying afterwards is equivalent.
        let probs = self.predictive_path(&ctx, Some(dish), base);
        let mut path: Vec<Option<&Node>> = Vec::with_capacity(target + 1);
        let mut cursor = Some(&self.root);
        path.push(cursor);
        for depth in 1..=target {
            cursor = cursor.and_then(|n| n.children.get(&ctx[target - depth]));
            path.push(cursor);
        }
        let mut decisions_rev = Vec::new();
        let mut stop_depth = 0usize;
        for depth in (0..=target).rev() {
            let parent_prob = if depth == 0 { base } else { probs[depth - 1] };
            let decision = match path[depth] {
                Some(node) => node.restaurant.decide_seat(
                    dish,
                    self.depth_params[depth],
                    parent_prob,
                    rng,
                ),
                None => SeatDecision::NewTable,
            };
            let joined = matches!(decision, SeatDecision::Join(_));
            decisions_rev.push(decision);
            if joined {
                stop_depth = depth;
                break;
            }
        }
        let decisions: Vec<SeatDecision> = decisions_rev.into_iter().rev().collect();

        // Apply in one descent; parent links point at the table seated
        // one level up, which is always decided before we descend.
        let mut node = &mut self.root;
        let mut parent_table: Option<TableId> = None;
        let mut seated_table: TableId = 0;
        let mut created_root_table = None;
        for depth in 0..=target {
            if self.variable_order {
                if depth == target {
                    node.stops += 1;
                } else {
                    node.passes += 1;
                }
            }
            if depth >= stop_depth {
                let decision = decisions[depth - stop_depth];
                let (table, created) =
                    node.restaurant
                        .apply_seat(dish, decision, parent_table, depth == target);
                if depth == 0 && created {
                    created_root_table = Some(table);
                }
                parent_table = Some(table);
                seated_table = table;
            }
            if depth < target {
                node = node.children.entry(ctx[target - depth - 1]).or_default();
            }
        }

        (
            Trace {
                ctx,
                dish,
                table: seated_table,
            },
            AddOutcome { created_root_table },
        )
    }

    /// Removes the customer recorded by `trace`, deleting emptied tables,
    /// withdrawing their parent proxies, and pruning emptied nodes.
    pub fn remove_customer(&mut self, trace: &Trace) -> Result<RemoveOutcome> {
        let (_, removed_root_table) = Self::remove_rec(
            &mut self.root,
            &trace.ctx,
            0,
            trace.dish,
            trace.table,
            self.variable_order,
        )?;
        Ok(RemoveOutcome { removed_root_table })
    }

    fn remove_rec(
        node: &mut Node,
        ctx: &[Sym],
        depth: usize,
        dish: Sym,
        table: TableId,
        variable_order: bool,
    ) -> Result<(Option<TableId>, Option<TableId>)> {
        let stale = || Error::StaleTrace { table };
        let target = ctx.len();
        if depth == target {
            if variable_order {
                node.stops = node.stops.checked_sub(1).ok_or_else(stale)?;
            }
            let removed = node.restaurant.unseat(dish, table, true)?;
            let mut root_removed = None;
            let proxy = match removed {
                Some((id, parent)) => {
                    if depth == 0 {
                        debug_assert!(parent.is_none());
                        root_removed = Some(id);
                    }
                    parent
                }
                None => None,
            };
            return Ok((proxy, root_removed));
        }

        let key = ctx[target - depth - 1];
        let child = node.children.get_mut(&key).ok_or_else(stale)?;
        let (proxy, mut root_removed) =
            Self::remove_rec(child, ctx, depth + 1, dish, table, variable_order)?;
        if child.prunable() {
            node.children.remove(&key);
        }
        if variable_order {
            node.passes = node.passes.checked_sub(1).ok_or_else(stale)?;
        }
        let mut proxy_up = None;
        if let Some(proxy_table) = proxy {
            if let Some((id, parent)) = node.restaurant.unseat(dish, proxy_table, false)? {
                if depth == 0 {
                    debug_assert!(parent.is_none());
                    root_removed = Some(id);
                } else {
                    debug_assert!(parent.is_some());
                    proxy_up = parent;
                }
            }
        }
        Ok((proxy_up, root_removed))
    }

    /// Resamples every depth's discount and concentration with the
    /// standard auxiliary-variable scheme, walking nodes in canonical
    /// order so the rng stream is reproducible.
    pub fn resample_hyperparameters(&mut self, rng: &mut impl Rng) {
        #[derive(Default)]
        struct Aux {
            sum_log_x: f64,
            sum_y: f64,
            sum_one_minus_y: f64,
            sum_one_minus_z: f64,
        }
        fn walk(node: &Node, depth: usize, params: &[DepthParams], aux: &mut [Aux], rng: &mut impl Rng) {
            let rest = &node.restaurant;
            let DepthParams { d, theta } = params[depth];
            if rest.customers >= 2 {
                let beta = Beta::new(theta + 1.0, rest.customers as f64 - 1.0)
                    .expect("valid auxiliary beta");
                let x: f64 = beta.sample(rng);
                aux[depth].sum_log_x += x.max(f64::MIN_POSITIVE).ln();
            }
            if rest.tables >= 2 {
                for i in 1..rest.tables {
                    let p = theta / (theta + d * i as f64);
                    if rng.gen::<f64>() < p {
                        aux[depth].sum_y += 1.0;
                    } else {
                        aux[depth].sum_one_minus_y += 1.0;
                    }
                }
            }
            for section in rest.dishes.values() {
                for table in &section.tables {
                    for j in 1..table.customers as u64 {
                        let p = (j as f64 - 1.0) / (j as f64 - d);
                        if rng.gen::<f64>() >= p {
                            aux[depth].sum_one_minus_z += 1.0;
                        }
                    }
                }
            }
            for child in node.children.values() {
                walk(child, depth + 1, params, aux, rng);
            }
        }

        let mut aux: Vec<Aux> = (0..=self.max_depth).map(|_| Aux::default()).collect();
        walk(&self.root, 0, &self.depth_params, &mut aux, rng);

        for (depth, stats) in aux.iter().enumerate() {
            let a = self.hyper.d_prior_a + stats.sum_one_minus_y;
            let b = self.hyper.d_prior_b + stats.sum_one_minus_z;
            let d = Beta::new(a, b).expect("valid beta posterior").sample(rng);
            let shape = self.hyper.theta_prior_shape + stats.sum_y;
            let rate = self.hyper.theta_prior_rate - stats.sum_log_x;
            let theta = Gamma::new(shape, 1.0 / rate)
                .expect("valid gamma posterior")
                .sample(rng);
            self.depth_params[depth] = DepthParams {
                d: d.clamp(1e-6, 1.0 - 1e-6),
                theta: theta.max(1e-6),
            };
        }
    }

    /// Root-restaurant tables as (dish, table id) pairs, in dish order.
    pub fn root_tables(&self) -> Vec<(Sym, TableId)> {
        let mut out = Vec::new();
        for (&dish, section) in &self.root.restaurant.dishes {
            for table in &section.tables {
                out.push((dish, table.id));
            }
        }
        out
    }

    /// Sum of directly seated customers (proxies excluded) over all
    /// nodes: one per add_customer call still live.
    pub fn total_direct_customers(&self) -> u64 {
        fn walk(node: &Node) -> u64 {
            node.restaurant.dishes.values().map(|s| s.direct).sum::<u64>()
                + node.children.values().map(walk).sum::<u64>()
        }
        walk(&self.root)
    }

    /// Customer counts per (context, dish), for accounting checks.
    /// Contexts are in most-recent-last order, matching `add_customer`.
    pub fn customer_census(&self) -> BTreeMap<(Vec<Sym>, Sym), u64> {
        fn walk(node: &Node, ctx: &mut Vec<Sym>, out: &mut BTreeMap<(Vec<Sym>, Sym), u64>) {
            for (&dish, section) in &node.restaurant.dishes {
                out.insert((ctx.clone(), dish), section.customers);
            }
            for (&sym, child) in &node.children {
                // A child extends the context by one older symbol.
                ctx.insert(0, sym);
                walk(child, ctx, out);
                ctx.remove(0);
            }
        }
        let mut out = BTreeMap::new();
        walk(&self.root, &mut Vec::new(), &mut out);
        out
    }

    /// Verifies the franchise bookkeeping; returns a description of the
    /// first violation found.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        fn walk(node: &Node, depth: usize, variable_order: bool) -> std::result::Result<(), String> {
            let rest = &node.restaurant;
            let mut customers = 0u64;
            let mut tables = 0u64;
            for (&dish, section) in &rest.dishes {
                let from_tables: u64 = section.tables.iter().map(|t| t.customers as u64).sum();
                if from_tables != section.customers {
                    return Err(format!("dish {dish}: table sum {from_tables} != c(s|h) {}", section.customers));
                }
                if section.tables.iter().any(|t| t.customers == 0) {
                    return Err(format!("dish {dish}: empty table"));
                }
                if section.customers == 0 {
                    return Err(format!("dish {dish}: empty section retained"));
                }
                // Every child table serving this dish sent one proxy here.
                let proxies: u64 = node
                    .children
                    .values()
                    .map(|c| c.restaurant.dish_counts(dish).1 as u64)
                    .sum();
                if section.direct + proxies != section.customers {
                    return Err(format!(
                        "dish {dish}: direct {} + child tables {proxies} != c(s|h) {}",
                        section.direct, section.customers
                    ));
                }
                customers += section.customers;
                tables += section.tables.len() as u64;
            }
            if customers != rest.customers {
                return Err(format!("c(h) {} != dish sum {customers}", rest.customers));
            }
            if tables != rest.tables {
                return Err(format!("t_h {} != dish sum {tables}", rest.tables));
            }
            if variable_order {
                let through: u64 = node.children.values().map(|c| c.stops + c.passes).sum();
                if through != node.passes {
                    return Err(format!("passes {} != child stop+pass sum {through}", node.passes));
                }
            }
            for (&sym, child) in &node.children {
                // Parent links of child tables must reference live tables
                // serving the same dish here.
                for (&dish, section) in &child.restaurant.dishes {
                    for table in &section.tables {
                        let ok = match table.parent_table {
                            Some(parent_id) => rest
                                .dishes
                                .get(&dish)
                                .map(|s| s.tables.iter().any(|t| t.id == parent_id))
                                .unwrap_or(false),
                            None => false,
                        };
                        if !ok {
                            return Err(format!(
                                "child {sym} dish {dish}: table {} has no live parent",
                                table.id
                            ));
                        }
                    }
                }
                if child.prunable() {
                    return Err(format!("child {sym}: prunable node retained"));
                }
                walk(child, depth + 1, variable_order)?;
            }
            Ok(())
        }
        walk(&self.root, 0, self.variable_order)?;
        // Root tables have no parent.
        for section in self.root.restaurant.dishes.values() {
            if section.tables.iter().any(|t| t.parent_table.is_some()) {
                return Err("root table with a parent link".into());
            }
        }
        Ok(())
    }

    /// Order-stable digest of all counts (table identities and id
    /// counters excluded), for before/after comparisons.
    pub fn fingerprint(&self) -> u64 {
        fn walk<H: Hasher>(node: &Node, state: &mut H) {
            node.restaurant.hash_statistics(state);
            node.stops.hash(state);
            node.passes.hash(state);
            node.children.len().hash(state);
            for (sym, child) in &node.children {
                sym.hash(state);
                walk(child, state);
            }
        }
        let mut hasher = DefaultHasher::new();
        self.max_depth.hash(&mut hasher);
        self.variable_order.hash(&mut hasher);
        for p in &self.depth_params {
            p.d.to_bits().hash(&mut hasher);
            p.theta.to_bits().hash(&mut hasher);
        }
        walk(&self.root, &mut hasher);
        hasher.finish()
    }
}
