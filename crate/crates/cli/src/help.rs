//! Config-file reference appended to --help.

pub const CONFIG_KEYS: &str = "\
Experiment config keys (TOML; every key has a default):

  seed                      master RNG seed (0)
  out_dir                   output directory ('runs/default'; env SKELDIFF_OUT overrides)
  precision                 scalar type: 'f64' or 'f32' ('f64')
  workers                   scoring worker threads, 1 = sequential (1; env SKELDIFF_WORKERS overrides)
  dataset                   path to a dataset manifest; omit to use [synthetic]

  [synthetic]               desk-scale gait generator
    seed                    generator seed (0)
    n_actors                actors in the scene (3)
    n_frames                frames per actor (600)
    joint_count             joints of the star skeleton (5)
    scene_id                scene identifier ('synth-0')
    [synthetic.gait]        amplitude (0.6), frequency (0.06),
                            phase_jitter (0.5), step_noise (0.015)
    [[synthetic.anomalies]] kind ('freeze'|'teleport'|'reverse'|'speed_burst'),
                            rate (expected anomalous fraction), magnitude

  [window]
    size                    window length N (6)
    stride                  window stride (1)
    condition_frames        conditioning frames k (3)
    strategy                'forecasting' | 'in_between' | 'random_imputation' ('forecasting')
    imputation_seed         mask seed for random imputation (0)
    normalization           'center_scale' | 'none' ('center_scale')

  [diffusion]
    steps                   diffusion steps T (10)
    schedule                'cosine' | 'linear' ('cosine')
    beta_start, beta_end    linear-schedule endpoints (1e-4, 2e-2)
    cosine_offset           cosine-schedule offset s (0.008)
    smooth_threshold        loss knee, fixed (1.0)

  [model]
    channel_ladder          full palindrome ladder ([2, 32, 64, 32, 2])
    layers_per_level        graph-conv layers per level (1)
    cond_width              conditioning embedding width, even (16)
    activation              'silu' | 'tanh' | 'identity' ('silu')
    hard_adjacency_mask     restrict spatial mixing to the skeleton (false)
    mask_self_loops         keep self-loops in the hard mask (true)
    learned_timestep_table  trainable timestep embedding (false)
    outer_residual          input-to-output residual connection (true)

  [conditioning]
    strategy                'input_concat' | 'e2e_embedding' | 'ae_embedding' ('ae_embedding')
    encoder_hidden          encoder hidden widths ([16])

  [train]
    epochs                  training epochs (36)
    batch_size              windows per optimizer step (256)
    learning_rate           initial learning rate (1e-4)
    lr_decay                per-epoch multiplicative decay (0.98)
    adam_beta1, adam_beta2  moment decay rates (0.9, 0.999)
    adam_eps                denominator floor (1e-8)
    early_stop_patience     epochs without improvement before stopping, 0 = off (0)
    early_stop_min_delta    relative improvement threshold (1e-3)

  [loss]
    lambda_smooth           weight of the displacement loss (1.0)
    lambda_rec              weight of the reconstruction loss (1.0)

  [scoring]
    generations             futures per window m (50)
    statistic               'min'|'max'|'mean'|'median'|'q<value>' ('min')
    allow_untrained         score with an untrained checkpoint (false)
    histogram_bins          bins of the error histogram (30)

  [eval]
    stats                   sweep statistics (['min'])
    generation_counts       sweep m values ([1, 50])
    histogram               always export per-label histograms (false)

  [ablation]
    strategies              conditioning strategies to cross (all three)
    tasks                   proxy tasks to cross (all three)
";
