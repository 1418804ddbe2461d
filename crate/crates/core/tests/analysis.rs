mod common;

use headmask::analysis::{
    attention_focus, content_selection_effect, decode_set, oracle_masks, synergy_analysis, Attention, FocusCategory,
};
use headmask::corpus::Split;
use headmask::decode::DecodeParams;
use headmask::model::HeadMaskConfig;
use headmask::saliency::{DecisionBoundary, TaggerParams};
use headmask::selection::{evaluate_subset, greedy_select_heads, system_masks};
use headmask::train::{train_tagger, TrainConfig};

const DP: DecodeParams = DecodeParams {
    beam_size: 1,
    min_len: 1,
    max_len: 20,
    length_penalty: 1.0,
};

#[test]
fn effect_synergy_and_focus_bookkeeping() {
    let (corpus, model) = common::tiny_trained(2);
    let set = corpus.split(Split::Analysis);
    let effect = content_selection_effect(&model, &set, &DP, 2).unwrap();
    let cfg = *model.config();
    for l in 0..cfg.n_dec_layers {
        for h in 0..cfg.n_heads {
            let want = effect.per_head[l][h].r1.f1 - effect.r_uni.r1.f1;
            assert!((effect.effect[l][h].r1.f1 - want).abs() <= 1e-12);
        }
    }

    let uniform = decode_set(&model, &set, Attention::Uniform, &DP, 1).unwrap();
    assert_eq!(uniform.mean, effect.r_uni);

    let synergy = synergy_analysis(&model, &set, &effect, &DP, 2).unwrap();
    for ls in &synergy.layers {
        let order = effect.head_order(ls.layer);
        assert_eq!(ls.order, order);
        let first = &ls.incremental_curve[0];
        assert_eq!(first.scores, effect.per_head[ls.layer][order[0]]);
        let last = ls.incremental_curve.last().unwrap();
        assert_eq!(last.k, cfg.n_heads);
        assert_eq!(last.scores, ls.joint_all);

        let all = HeadMaskConfig::heads_in_layer(cfg.n_dec_layers, cfg.n_heads, ls.layer, &order);
        let masks = oracle_masks(&set);
        let joint = decode_set(
            &model,
            &set,
            Attention::Masked {
                mask_cfg: &all,
                masks: &masks,
            },
            &DP,
            1,
        )
        .unwrap();
        assert_eq!(joint.mean, ls.joint_all);
    }

    let focus = attention_focus(&model, &set, &corpus.vocab, &DP, 2).unwrap();
    for l in 0..cfg.n_dec_layers {
        for h in 0..cfg.n_heads {
            let total = focus.totals[l][h];
            let c = |cat| focus.count(l, h, cat);
            assert!(c(FocusCategory::CopySalient) + c(FocusCategory::NoncopySalient) <= total);
            assert!(c(FocusCategory::CopyContent) + c(FocusCategory::NoncopyContent) <= total);
            assert!(c(FocusCategory::First) <= total && c(FocusCategory::Last) <= total);
        }
    }
}

#[test]
fn analyses_do_not_depend_on_thread_count() {
    let (corpus, model) = common::tiny_trained(3);
    let set = corpus.split(Split::Analysis);
    let one = content_selection_effect(&model, &set, &DP, 1).unwrap();
    let four = content_selection_effect(&model, &set, &DP, 4).unwrap();
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&four).unwrap()
    );
}

#[test]
fn selection_scores_reproduce_and_pick_the_maximum() {
    let (corpus, model) = common::tiny_trained(5);
    let set = corpus.split(Split::Analysis);
    let tc = TrainConfig {
        max_epochs: 2,
        seed: 5,
        ..TrainConfig::tagger()
    };
    let tagger: TaggerParams = train_tagger(
        &model,
        &corpus.split(Split::Train),
        &corpus.split(Split::Validation),
        16,
        &tc,
    )
    .unwrap()
    .params;
    let boundary = DecisionBoundary::from_hundredths(10).unwrap();
    let effect = content_selection_effect(&model, &set, &DP, 1).unwrap();
    let cfg = *model.config();

    let result = greedy_select_heads(&model, &tagger, boundary, &set, &effect, 4, &DP, 1).unwrap();
    // Four heads and a block of four: one evaluation per layer.
    assert_eq!(result.trajectory.len(), cfg.n_dec_layers);
    assert!(result.trajectory.iter().all(|p| p.k == 4));
    let max = result
        .trajectory
        .iter()
        .map(|p| p.score)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(result.score, max);

    let masks = system_masks(&tagger, boundary, &set, 1).unwrap();
    for p in &result.trajectory {
        let (scores, _) = evaluate_subset(&model, &set, &masks, p.layer, &p.heads, &DP, 1).unwrap();
        assert!((scores.r1_plus_r2() - p.score).abs() <= 1e-12);
    }

    let again = greedy_select_heads(&model, &tagger, boundary, &set, &effect, 4, &DP, 2).unwrap();
    assert_eq!(again, result);

    let fine = greedy_select_heads(&model, &tagger, boundary, &set, &effect, 1, &DP, 1).unwrap();
    assert_eq!(fine.trajectory.len(), cfg.n_dec_layers * cfg.n_heads);
    assert!(fine.score >= result.score);
}
