//! Bundled model configurations. Shapes are taken from the public GPT-OSS
//! 120B and DeepSeek-V3 configurations; per-expert weights are stored fused
//! across all experts of a layer and flattened to 2-D, so a row granularity
//! that divides the per-expert row count keeps expert boundaries intact.
//!
//! Each transformer layer is its own group (one planning unit per wrapping
//! module); the embedding stack forms the final group.

use crate::config::{ConfigGranularity, GroupConfig, ModelConfig, TensorConfig};

const ELEMENT: ConfigGranularity = ConfigGranularity::Element;

fn rows(value: u64) -> ConfigGranularity {
    ConfigGranularity::Rows { value }
}

fn block(value: Vec<u64>) -> ConfigGranularity {
    ConfigGranularity::Block { value }
}

#[derive(Default)]
struct Builder {
    tensors: Vec<TensorConfig>,
    groups: Vec<GroupConfig>,
    current: Vec<String>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<u64>, granularity: ConfigGranularity) {
        self.push_tensor(name, shape, granularity, false);
    }

    fn push_sweep(&mut self, name: String, shape: Vec<u64>, granularity: ConfigGranularity) {
        self.push_tensor(name, shape, granularity, true);
    }

    fn push_tensor(
        &mut self,
        name: String,
        shape: Vec<u64>,
        granularity: ConfigGranularity,
        sweep: bool,
    ) {
        self.current.push(name.clone());
        self.tensors.push(TensorConfig {
            name,
            shape,
            dtype_bytes: 2,
            granularity,
            sweep,
        });
    }

    fn group(&mut self, name: String) {
        self.groups.push(GroupConfig {
            name,
            tensors: std::mem::take(&mut self.current),
        });
    }
}

/// 36 layers, hidden 2880, 64 query / 8 key-value heads of dim 64, 128
/// experts with intermediate 2880. About 116.8B parameters.
pub fn gpt_oss_120b() -> ModelConfig {
    let mut b = Builder::default();
    for i in 0..36 {
        let p = format!("block.{i}.");
        b.push(format!("{p}attn.norm"), vec![2880], ELEMENT);
        b.push(format!("{p}attn.q_proj"), vec![4096, 2880], rows(1));
        b.push(format!("{p}attn.q_bias"), vec![4096], ELEMENT);
        b.push(format!("{p}attn.k_proj"), vec![512, 2880], rows(1));
        b.push(format!("{p}attn.k_bias"), vec![512], ELEMENT);
        b.push(format!("{p}attn.v_proj"), vec![512, 2880], rows(1));
        b.push(format!("{p}attn.v_bias"), vec![512], ELEMENT);
        b.push(format!("{p}attn.o_proj"), vec![2880, 4096], rows(1));
        b.push(format!("{p}attn.o_bias"), vec![2880], ELEMENT);
        b.push(format!("{p}attn.sinks"), vec![64], ELEMENT);
        b.push(format!("{p}mlp.norm"), vec![2880], ELEMENT);
        b.push(format!("{p}mlp.router"), vec![128, 2880], rows(1));
        b.push(format!("{p}mlp.router_bias"), vec![128], ELEMENT);
        // 128 experts x gate+up [5760 x 2880] fused; rows are expert-major.
        b.push_sweep(format!("{p}mlp.gate_up"), vec![368640, 5760], rows(1));
        b.push(format!("{p}mlp.gate_up_bias"), vec![737280], block(vec![5760]));
        b.push_sweep(format!("{p}mlp.down"), vec![368640, 2880], rows(1));
        b.push(format!("{p}mlp.down_bias"), vec![368640], block(vec![2880]));
        b.group(format!("block.{i}"));
    }
    b.push("embedding".into(), vec![201088, 2880], rows(1));
    b.push("norm".into(), vec![2880], ELEMENT);
    b.push("unembedding".into(), vec![201088, 2880], rows(1));
    b.group("embed".into());
    ModelConfig {
        name: "gpt-oss-120b".into(),
        notes: Some(
            "Shapes follow the public GPT-OSS-120B configuration. Expert weights \
             are fused across the 128 experts of a layer and flattened to 2-D; \
             sweep-marked tensors are the expert matrices."
                .into(),
        ),
        tensors: b.tensors,
        groups: b.groups,
    }
}

/// 61 layers (first 3 dense), hidden 7168, multi-head latent attention with
/// query rank 1536 / key-value rank 512, 256 routed plus one shared expert
/// with intermediate 2048. About 671B parameters.
pub fn deepseek_v3_671b() -> ModelConfig {
    let mut b = Builder::default();
    for i in 0..61 {
        let p = format!("block.{i}.");
        b.push(format!("{p}attn.norm"), vec![7168], ELEMENT);
        b.push(format!("{p}attn.q_a_proj"), vec![1536, 7168], rows(1));
        b.push(format!("{p}attn.q_a_norm"), vec![1536], ELEMENT);
        b.push(format!("{p}attn.q_b_proj"), vec![24576, 1536], rows(1));
        b.push(format!("{p}attn.kv_a_proj"), vec![576, 7168], rows(1));
        b.push(format!("{p}attn.kv_a_norm"), vec![512], ELEMENT);
        b.push(format!("{p}attn.kv_b_proj"), vec![32768, 512], rows(1));
        b.push(format!("{p}attn.o_proj"), vec![7168, 16384], rows(1));
        b.push(format!("{p}mlp.norm"), vec![7168], ELEMENT);
        if i < 3 {
            b.push(format!("{p}mlp.gate"), vec![18432, 7168], rows(1));
            b.push(format!("{p}mlp.up"), vec![18432, 7168], rows(1));
            b.push(format!("{p}mlp.down"), vec![7168, 18432], rows(1));
        } else {
            b.push(format!("{p}mlp.router"), vec![256, 7168], rows(1));
            b.push(format!("{p}mlp.router_bias"), vec![256], ELEMENT);
            // 256 routed experts fused, expert-major rows.
            b.push_sweep(format!("{p}mlp.experts.gate"), vec![524288, 7168], rows(1));
            b.push_sweep(format!("{p}mlp.experts.up"), vec![524288, 7168], rows(1));
            b.push_sweep(format!("{p}mlp.experts.down"), vec![1835008, 2048], rows(1));
            b.push_sweep(format!("{p}mlp.shared.gate"), vec![2048, 7168], rows(1));
            b.push_sweep(format!("{p}mlp.shared.up"), vec![2048, 7168], rows(1));
            b.push_sweep(format!("{p}mlp.shared.down"), vec![7168, 2048], rows(1));
        }
        b.group(format!("block.{i}"));
    }
    b.push("embedding".into(), vec![129280, 7168], rows(1));
    b.push("norm".into(), vec![7168], ELEMENT);
    b.push("lm_head".into(), vec![129280, 7168], rows(1));
    b.group("embed".into());
    ModelConfig {
        name: "deepseek-v3-671b".into(),
        notes: Some(
            "Shapes follow the public DeepSeek-V3 configuration. Routed expert \
             weights are fused across the 256 experts of a layer and flattened \
             to 2-D; sweep-marked tensors are the expert matrices."
                .into(),
        ),
        tensors: b.tensors,
        groups: b.groups,
    }
}
