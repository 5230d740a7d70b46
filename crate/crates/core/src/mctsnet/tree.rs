use crate::nn::Tensor;
use crate::sokoban::{Action, GridState, Model, NUM_ACTIONS};

#[derive(Clone, Debug)]
pub struct MemoryNode {
    pub state: GridState,
    pub terminal: bool,
    /// Memory vector; present once the node has been embedded.
    pub h: Option<Tensor>,
    pub visits: u32,
    pub children: [Option<usize>; NUM_ACTIONS],
    pub rewards: [f64; NUM_ACTIONS],
}

/// Search tree whose nodes carry learned memory vectors.
#[derive(Clone, Debug)]
pub struct MemoryTree {
    nodes: Vec<MemoryNode>,
}

impl MemoryTree {
    pub fn new(root: GridState, terminal: bool) -> Self {
        Self {
            nodes: vec![MemoryNode {
                state: root,
                terminal,
                h: None,
                visits: 0,
                children: [None; NUM_ACTIONS],
                rewards: [0.0; NUM_ACTIONS],
            }],
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn root_node(&self) -> &MemoryNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &MemoryNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[MemoryNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn node_mut(&mut self, id: usize) -> &mut MemoryNode {
        &mut self.nodes[id]
    }

    /// Child under `a`, created from the model on first use.
    pub(crate) fn expand<M: Model<State = GridState>>(&mut self, id: usize, a: Action, model: &M) -> usize {
        if let Some(c) = self.nodes[id].children[a.index()] {
            return c;
        }
        let step = model.step(&self.nodes[id].state, a);
        self.nodes.push(MemoryNode {
            state: step.state,
            terminal: step.terminal,
            h: None,
            visits: 0,
            children: [None; NUM_ACTIONS],
            rewards: [0.0; NUM_ACTIONS],
        });
        let c = self.nodes.len() - 1;
        self.nodes[id].children[a.index()] = Some(c);
        self.nodes[id].rewards[a.index()] = step.reward;
        c
    }

    /// Node ids in the subtree under `id`, breadth first, including `id`.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.nodes[out[i]].children.iter().flatten());
            i += 1;
        }
        out
    }

    /// Re-roots at the child under `a`, keeping the retained memories and
    /// visit counts. An unexpanded child yields a fresh tree at `T(s, a)`.
    pub fn replan_reroot<M: Model<State = GridState>>(self, a: Action, model: &M) -> Self {
        let root = &self.nodes[0];
        let Some(child) = root.children[a.index()] else {
            let step = model.step(&root.state, a);
            return Self::new(step.state, step.terminal);
        };
        let keep = self.subtree(child);
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut slots: Vec<Option<MemoryNode>> = self.nodes.into_iter().map(Some).collect();
        let nodes = keep
            .iter()
            .map(|&old| {
                let mut n = slots[old].take().expect("each node is kept once");
                for c in n.children.iter_mut().flatten() {
                    *c = remap[*c];
                }
                n
            })
            .collect();
        Self { nodes }
    }
}
