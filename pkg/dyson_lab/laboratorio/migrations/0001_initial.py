# Generated by Django 4.2.16 on 2026-10-17 10:12

from django.db import migrations, models
import django.db.models.deletion
import django.utils.timezone


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Run',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(choices=[('simulate', 'simulate'), ('solve', 'solve'), ('reference', 'reference'), ('verify', 'verify'), ('sweep', 'sweep')], max_length=20)),
                ('config_hash', models.CharField(db_index=True, max_length=64)),
                ('config_path', models.CharField(blank=True, max_length=500)),
                ('seed', models.CharField(blank=True, max_length=20)),
                ('convention', models.CharField(default='raw', max_length=10)),
                ('out_dir', models.CharField(max_length=500)),
                ('manifest_sha256', models.CharField(blank=True, max_length=64)),
                ('status', models.CharField(choices=[('running', 'In corso'), ('ok', 'Conclusa'), ('failed', 'Fallita'), ('checks_failed', 'Controlli non superati')], default='running', max_length=20)),
                ('exit_code', models.SmallIntegerField(blank=True, null=True)),
                ('message', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(default=django.utils.timezone.now)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'verbose_name': 'Esecuzione',
                'verbose_name_plural': 'Esecuzioni',
                'ordering': ['-started_at', '-id'],
            },
        ),
        migrations.CreateModel(
            name='CheckOutcome',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=40)),
                ('input_path', models.CharField(blank=True, max_length=1000)),
                ('passed', models.BooleanField(default=False)),
                ('worst', models.FloatField(blank=True, null=True)),
                ('tolerance', models.JSONField(blank=True, default=dict)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='checks', to='laboratorio.run')),
            ],
            options={
                'verbose_name': 'Esito di controllo',
                'verbose_name_plural': 'Esiti di controllo',
                'ordering': ['run', 'id'],
            },
        ),
    ]
